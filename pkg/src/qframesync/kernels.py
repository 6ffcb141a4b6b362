"""Hot-kernel dispatch.

Set ``QFRAMESYNC_DISABLE_NUMBA=1`` to force the pure-numpy lane (also used
automatically when numba is unavailable). Both lanes are integer-exact, so
results do not depend on the lane; only speed does. ``benchmarks/bench_kernels.py``
compares the two.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

_DISABLED = os.environ.get("QFRAMESYNC_DISABLE_NUMBA", "").strip() not in ("", "0", "false", "False")

if _DISABLED:
    _impl = _kernels_numpy
    NUMBA_ENABLED = False
else:
    try:
        from . import _kernels_numba as _impl

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - depends on environment
        _impl = _kernels_numpy
        NUMBA_ENABLED = False

merge_slot_votes = _impl.merge_slot_votes
direct_correlation_scores = _impl.direct_correlation_scores
