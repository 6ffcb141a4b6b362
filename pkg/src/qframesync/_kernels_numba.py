"""Numba-jitted hot kernels. See ``_kernels_numpy`` for the reference lane."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def merge_slot_votes(slots, signs, n_slots):
    values = np.zeros(n_slots, dtype=np.int8)
    conflict = np.zeros(n_slots, dtype=np.uint8)
    for i in range(slots.size):
        s = slots[i]
        v = signs[i]
        if conflict[s]:
            continue
        cur = values[s]
        if cur == 0:
            values[s] = v
        elif cur != v:
            values[s] = 0
            conflict[s] = 1
    return values


@numba.njit(cache=True)
def direct_correlation_scores(received, template):
    n = received.size
    scores = np.zeros(n, dtype=np.int64)
    for d in range(n):
        acc = 0
        for q in range(n):
            idx = q - d
            if idx < 0:
                idx += n
            acc += received[q] * template[idx]
        scores[d] = acc
    return scores
