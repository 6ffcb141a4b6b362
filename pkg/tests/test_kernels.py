import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qframesync import _kernels_numpy
from qframesync import kernels

try:
    from qframesync import _kernels_numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

LANES = [_kernels_numpy] + ([_kernels_numba] if HAVE_NUMBA else [])


def reference_merge(slots, signs, n_slots):
    values = [0] * n_slots
    conflicted = [False] * n_slots
    for s, v in zip(slots, signs):
        if conflicted[s]:
            continue
        if values[s] == 0:
            values[s] = v
        elif values[s] != v:
            values[s] = 0
            conflicted[s] = True
    return values


def reference_scores(received, template):
    n = len(received)
    return [
        sum(received[q] * template[(q - d) % n] for q in range(n))
        for d in range(n)
    ]


@pytest.mark.parametrize("impl", LANES, ids=lambda m: m.__name__.rsplit("_", 1)[-1])
class TestLanes:
    def test_merge_matches_reference(self, impl):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n_slots = int(rng.integers(1, 40))
            k = int(rng.integers(0, 60))
            slots = rng.integers(0, n_slots, size=k).astype(np.int64)
            signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=k)
            out = impl.merge_slot_votes(slots, signs, n_slots)
            assert out.tolist() == reference_merge(slots.tolist(), signs.tolist(), n_slots)

    def test_scores_match_reference(self, impl):
        rng = np.random.default_rng(2)
        for _ in range(10):
            n = int(rng.integers(4, 48))
            received = rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=n)
            template = rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=n)
            out = impl.direct_correlation_scores(received, template)
            assert out.tolist() == reference_scores(received.tolist(), template.tolist())


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
class TestLaneEquivalence:
    def test_identical_outputs(self):
        rng = np.random.default_rng(3)
        slots = rng.integers(0, 500, size=2000).astype(np.int64)
        signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=2000)
        a = _kernels_numpy.merge_slot_votes(slots, signs, 500)
        b = _kernels_numba.merge_slot_votes(slots, signs, 500)
        assert np.array_equal(a, b)

        received = rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=512)
        template = rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=512)
        assert np.array_equal(
            _kernels_numpy.direct_correlation_scores(received, template),
            _kernels_numba.direct_correlation_scores(received, template),
        )


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 19), st.sampled_from([-1, 1])), max_size=60),
)
def test_merge_vote_properties(clicks):
    slots = np.array([c[0] for c in clicks], dtype=np.int64)
    signs = np.array([c[1] for c in clicks], dtype=np.int8)
    out = kernels.merge_slot_votes(slots, signs, 20)
    for slot in range(20):
        here = signs[slots == slot]
        if here.size == 0:
            assert out[slot] == 0
        elif np.all(here == 1):
            assert out[slot] == 1
        elif np.all(here == -1):
            assert out[slot] == -1
        else:
            assert out[slot] == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(4, 40))
def test_direct_scores_shift_property(seed, n):
    # Correlating a cyclically shifted copy of the template against the
    # template itself must peak at the shift.
    rng = np.random.default_rng(seed)
    template = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    shift = int(rng.integers(0, n))
    received = np.roll(template, shift).astype(np.int8)
    scores = kernels.direct_correlation_scores(received, template)
    assert scores[shift] == n
    assert scores.max() == n


def test_env_flag_selects_numpy_lane():
    env = dict(os.environ, QFRAMESYNC_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c",
         "from qframesync.kernels import NUMBA_ENABLED; print(NUMBA_ENABLED)"],
        capture_output=True, text=True, env=env, check=True,
    )
    assert out.stdout.strip() == "False"
