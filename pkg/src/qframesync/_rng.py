"""Seed derivation helpers.

All randomness in the package flows through numpy ``Generator`` objects
backed by PCG64. Sub-streams are derived from a root seed with
``SeedSequence(entropy=seed, spawn_key=(...))`` so that every consumer has
its own independent, order-free stream:

* sync string:       spawn_key (0,) for the per-column draws, (1,) for the
                     per-position draws
* frame schedule:    spawn_key (w,) for the random bits of frame w
* channel transmit:  spawn_key (0,) for the clock wander walk,
                     spawn_key (1 + w,) for everything inside frame w
* experiment runs:   spawn_key (cell_index, trial) per trial

Two runs with the same seed therefore produce byte-identical outputs, and
drawing from one sub-stream never perturbs another.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def bernoulli_indices(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    """Indices i in [0, n) with independent inclusion probability p.

    Sparse geometric-gap sampling: cost is O(hits), not O(n), which is what
    makes slot-level channel simulation affordable at 10^8+ slots.
    """
    if n <= 0 or p <= 0.0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(n, dtype=np.int64)
    if p < 1e-12:
        # Geometric gaps would overflow int64; expected hits ~ n*p are few,
        # so draw the count and place the hits by rejection.
        k = int(rng.binomial(n, p))
        if k == 0:
            return np.empty(0, dtype=np.int64)
        idx = np.unique(rng.integers(0, n, size=k))
        while idx.size < k:
            extra = rng.integers(0, n, size=k - idx.size)
            idx = np.unique(np.concatenate([idx, extra]))
        return np.sort(idx).astype(np.int64)
    out = []
    pos = -1
    # Draw gap batches sized to overshoot slightly; loop rarely repeats.
    expect = max(16, int(n * p * 1.2) + 8)
    while pos < n:
        gaps = rng.geometric(p, size=expect)
        idx = pos + np.cumsum(gaps)
        out.append(idx)
        pos = int(idx[-1])
    idx = np.concatenate(out)
    return idx[idx < n].astype(np.int64, copy=False)
