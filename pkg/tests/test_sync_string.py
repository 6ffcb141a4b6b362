import numpy as np
import pytest

from qframesync._rng import substream
from qframesync.errors import ParameterError
from qframesync.sync_string import (
    SyncString,
    SyncStringParams,
    autocorrelation,
    autocorrelation_curve,
    generate_sync_string,
    load_sync_string,
    nominal_c0,
    peak_lags,
    save_sync_string,
)


def brute_autocorrelation(bits, lag):
    """Independent O(L) oracle: circular, mean-centered, normalized."""
    d = [b - sum(bits) / len(bits) for b in bits]
    n = len(d)
    num = sum(d[i] * d[(i + lag) % n] for i in range(n))
    den = sum(x * x for x in d)
    return num / den


class TestNominalC0:
    def test_lambda_one(self):
        assert nominal_c0(1.0) == pytest.approx(1 / 3)

    def test_lambda_three_halves(self):
        assert nominal_c0(1.5) == pytest.approx(0.0)

    def test_lambda_half(self):
        assert nominal_c0(0.5) == pytest.approx(1 / 12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ParameterError):
            nominal_c0(0.0)
        with pytest.raises(ParameterError):
            nominal_c0(-1.0)


class TestGeneration:
    def test_tiny_case_matches_generation_equation(self):
        # L1=1, N1=4: one column draw x_0 for the whole string, one y per
        # position; bit = +1 iff y > lam * x_0.
        params = SyncStringParams(sub_len=1, n_peaks=4, lam=1.0, seed=123)
        s = generate_sync_string(params)
        x0 = substream(123, 0).random(1)[0]
        y = substream(123, 1).random(4)
        expected = np.where(y > x0, 1, -1)
        assert np.array_equal(s.bits, expected)

    def test_values_and_length(self):
        s = generate_sync_string(SyncStringParams(16, 8, 1.0, 0))
        assert len(s) == 128
        assert set(np.unique(s.bits)) <= {-1, 1}

    def test_deterministic(self):
        params = SyncStringParams(50, 20, 1.0, 42)
        a = generate_sync_string(params)
        b = generate_sync_string(params)
        assert np.array_equal(a.bits, b.bits)

    def test_different_seeds_differ(self):
        a = generate_sync_string(SyncStringParams(50, 20, 1.0, 1))
        b = generate_sync_string(SyncStringParams(50, 20, 1.0, 2))
        assert not np.array_equal(a.bits, b.bits)

    def test_invalid_params(self):
        with pytest.raises(ParameterError):
            SyncStringParams(0, 4, 1.0, 0)
        with pytest.raises(ParameterError):
            SyncStringParams(4, 0, 1.0, 0)
        with pytest.raises(ParameterError):
            SyncStringParams(4, 4, 0.0, 0)
        with pytest.raises(ParameterError):
            SyncStringParams(4, 4, 1.6, 0)

    def test_near_zero_mean_at_lambda_one(self):
        # The mean tends to 0, but bits sharing a column draw are correlated
        # with covariance c0, so Var(mean) = (1 + (n_peaks-1)*c0)/L, not 1/L.
        length = 10_000
        for n_peaks in (16, 100):
            sub = length // n_peaks
            bound = 5 * np.sqrt((1 + (n_peaks - 1) / 3) / length)
            hits = 0
            for seed in range(30):
                s = generate_sync_string(SyncStringParams(sub, n_peaks, 1.0, seed))
                if abs(float(s.bits.mean())) < bound:
                    hits += 1
            assert hits >= 29


class TestAutocorrelation:
    def test_lag_zero_is_exactly_one(self):
        s = generate_sync_string(SyncStringParams(10, 10, 0.7, 5))
        assert autocorrelation(s, 0) == 1.0

    def test_lag_out_of_range(self):
        s = generate_sync_string(SyncStringParams(4, 4, 1.0, 0))
        with pytest.raises(ParameterError):
            autocorrelation(s, 16)
        with pytest.raises(ParameterError):
            autocorrelation(s, -1)

    def test_matches_brute_force_all_lags(self):
        s = generate_sync_string(SyncStringParams(8, 16, 1.0, 9))
        for lag in range(len(s)):
            assert autocorrelation(s, lag) == pytest.approx(
                brute_autocorrelation(s.bits.tolist(), lag), abs=1e-12
            )

    def test_curve_matches_single_lag(self):
        s = generate_sync_string(SyncStringParams(25, 40, 1.0, 3))
        curve = autocorrelation_curve(s)
        for lag in (0, 1, 25, 26, 999):
            assert curve[lag] == pytest.approx(autocorrelation(s, lag), abs=1e-12)

    def test_curve_matches_brute_force_large(self):
        s = generate_sync_string(SyncStringParams(100, 100, 1.0, 17))
        curve = autocorrelation_curve(s)
        for lag in (1, 100, 107, 5000):
            assert curve[lag] == pytest.approx(
                brute_autocorrelation(s.bits.tolist(), lag), abs=1e-12
            )

    def test_peak_structure_lambda_one(self):
        params = SyncStringParams(100, 100, 1.0, 21)  # L = 1e4
        s = generate_sync_string(params)
        curve = autocorrelation_curve(s)
        peaks = curve[peak_lags(params)]
        assert peaks.mean() == pytest.approx(1 / 3, abs=0.03)
        off = np.ones(len(s), dtype=bool)
        off[0] = False
        off[peak_lags(params)] = False
        # Peaks stand clear above every off-peak value.
        assert peaks.min() > np.abs(curve[off]).max()

    def test_single_lag_values(self):
        params = SyncStringParams(100, 100, 1.0, 2)
        s = generate_sync_string(params)
        bound = 5 / np.sqrt(len(s))
        assert autocorrelation(s, 100) == pytest.approx(1 / 3, abs=bound)
        assert abs(autocorrelation(s, 107)) < bound

    def test_degenerate_string_raises(self):
        params = SyncStringParams(2, 2, 1.0, 0)
        s = SyncString(bits=np.ones(4, dtype=np.int8), params=params, c0_nominal=1 / 3)
        with pytest.raises(ParameterError):
            autocorrelation(s, 1)


class TestRoundTrip:
    def test_save_load_byte_exact(self, tmp_path):
        s = generate_sync_string(SyncStringParams(64, 32, 0.8, 77))
        path = tmp_path / "string.sync"
        save_sync_string(s, path)
        loaded = load_sync_string(path)
        assert np.array_equal(loaded.bits, s.bits)
        assert loaded.params == s.params
        assert loaded.c0_nominal == s.c0_nominal
        path2 = tmp_path / "string2.sync"
        save_sync_string(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.sync"
        path.write_bytes(b'{"format": "something-else"}\n\x01\x01')
        with pytest.raises(ParameterError):
            load_sync_string(path)
