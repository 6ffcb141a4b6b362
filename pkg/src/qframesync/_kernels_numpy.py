"""Pure-numpy implementations of the hot kernels.

Semantically identical to the jitted versions in ``_kernels_numba``; both
operate on integers only, so the two lanes are bit-for-bit interchangeable.
"""

from __future__ import annotations

import numpy as np


def merge_slot_votes(slots: np.ndarray, signs: np.ndarray, n_slots: int) -> np.ndarray:
    """Per-slot value from Z-basis clicks: +1/-1 if unanimous, 0 on conflict.

    ``slots`` must already be restricted to [0, n_slots).
    """
    values = np.zeros(n_slots, dtype=np.int8)
    if slots.size == 0:
        return values
    pos = np.bincount(slots[signs > 0], minlength=n_slots)
    neg = np.bincount(slots[signs < 0], minlength=n_slots)
    values[(pos > 0) & (neg == 0)] = 1
    values[(neg > 0) & (pos == 0)] = -1
    return values


def direct_correlation_scores(received: np.ndarray, template: np.ndarray) -> np.ndarray:
    """All-shift direct correlation: scores[d] = sum_q received[q] * template[(q-d) mod N].

    O(N^2) by construction; this is the reference the FFT search is checked
    against, so it must stay a plain sum of products.
    """
    n = received.size
    r = received.astype(np.int64, copy=False)
    t2 = np.concatenate([template, template]).astype(np.int64, copy=False)
    scores = np.empty(n, dtype=np.int64)
    for d in range(n):
        scores[d] = r @ t2[n - d : 2 * n - d]
    return scores
