import json
import math

import numpy as np
import pytest

from qframesync.channel import scenario_presets, transmit
from qframesync.clock_recovery import GateConfig, gate_filter, refine_period_lts
from qframesync.errors import ZeroSiftedError
from qframesync.framing import build_layout, build_schedule
from qframesync.harness import (
    ExperimentConfig,
    align_detections,
    calibrate_loss,
    compute_qber,
    phase_anchor,
    run_offset_trial,
    run_oracle_equivalence,
    run_table1,
    run_table2,
    wilson_interval,
    write_rows_csv,
    TRIAL_FIELDS,
    _seed_int,
)
from qframesync.sync_string import SyncStringParams, generate_sync_string

SMALL = dict(sub_len=100, n_peaks=50, lam=1.0, m=1, string_seed=7)


@pytest.fixture(scope="module")
def aligned_setup():
    """Noiseless, lossy stream with known alignment for QBER tests."""
    cfg = ExperimentConfig(**SMALL, seed=5)
    sync = generate_sync_string(cfg.string_params)
    layout = build_layout(cfg.m, sync)
    clock, ch, delays = scenario_presets("ideal")
    from qframesync.channel import ChannelParams

    ch = ChannelParams(loss_db=13.0, mu=1.0, det_eff=1.0, dark_rate=0.0,
                       z_basis_prob=0.9, e_mis=0.0)
    schedule = build_schedule(layout, sync, 4, seed=3)
    stream = transmit(schedule, clock, ch, delays, seed=4)
    est = refine_period_lts(stream, clock.tau_b)
    return cfg, sync, layout, clock, schedule, stream, est


class TestWilson:
    def test_known_value(self):
        lo, hi = wilson_interval(90, 100)
        assert lo == pytest.approx(0.825, abs=0.01)
        assert hi == pytest.approx(0.944, abs=0.01)

    def test_degenerate(self):
        assert wilson_interval(0, 0) == (0.0, 1.0)

    def test_bounds(self):
        lo, hi = wilson_interval(100, 100)
        assert 0.95 < lo < 1.0
        assert hi == pytest.approx(1.0, abs=1e-12)


class TestComputeQber:
    def test_noiseless_aligned_is_zero(self, aligned_setup):
        cfg, sync, layout, clock, schedule, stream, est = aligned_setup
        start = float(stream.t[0])
        g0 = int(np.rint((start - clock.t0) / clock.tau_b))
        delta_true = (-g0) % layout.frame_len
        aligned = align_detections(stream, est.tau_b, start, delta_true, layout,
                                   window_base_slot=g0,
                                   total_pulses=schedule.total_pulses)
        assert compute_qber(aligned, schedule) == 0.0

    def test_one_slot_misalignment_is_half(self, aligned_setup):
        cfg, sync, layout, clock, schedule, stream, est = aligned_setup
        start = float(stream.t[0])
        g0 = int(np.rint((start - clock.t0) / clock.tau_b))
        delta_true = (-g0) % layout.frame_len
        aligned = align_detections(stream, est.tau_b, start,
                                   (delta_true + 1) % layout.frame_len, layout,
                                   window_base_slot=g0,
                                   total_pulses=schedule.total_pulses)
        qber = compute_qber(aligned, schedule)
        assert 0.4 < qber < 0.6

    def test_misalignment_flip_rate(self, aligned_setup):
        # e_mis = 0.5% shows up directly as the sifted error rate.
        cfg, sync, layout, clock, schedule, stream, est = aligned_setup
        from qframesync.channel import ChannelParams, scenario_presets as presets

        clock2, _, delays = presets("ideal")
        ch = ChannelParams(loss_db=13.0, mu=1.0, det_eff=1.0, dark_rate=0.0,
                           z_basis_prob=0.9, e_mis=0.005)
        stream2 = transmit(schedule, clock2, ch, delays, seed=8)
        est2 = refine_period_lts(stream2, clock2.tau_b)
        start = float(stream2.t[0])
        g0 = int(np.rint((start - clock2.t0) / clock2.tau_b))
        aligned = align_detections(stream2, est2.tau_b, start,
                                   (-g0) % layout.frame_len, layout,
                                   window_base_slot=g0,
                                   total_pulses=schedule.total_pulses)
        qber = compute_qber(aligned, schedule)
        assert 0.001 < qber < 0.012

    def test_zero_sifted_raises(self, aligned_setup):
        cfg, sync, layout, clock, schedule, stream, est = aligned_setup
        from qframesync.harness import AlignedDetections

        empty = AlignedDetections(n_hat=np.empty(0, np.int64), det=np.empty(0, np.uint8))
        with pytest.raises(ZeroSiftedError):
            compute_qber(empty, schedule)


@pytest.fixture(scope="module")
def small_cal():
    cfg = ExperimentConfig(**SMALL, seed=9, trials=6, calib_detections=30_000)
    sync = generate_sync_string(cfg.string_params)
    layout = build_layout(cfg.m, sync)
    cal = calibrate_loss(cfg, sync, layout, "table1_loss17.6", seed_key=0)
    return cfg, sync, layout, cal


class TestOffsetTrials:
    def test_calibration_quality(self, small_cal):
        cfg, sync, layout, cal = small_cal
        assert abs(cal.est.tau_b / cal.clock.tau_b - 1) < 1e-9
        assert np.max(np.abs(cal.delays_est.delays_ps - cal.delays_true.delays_ps)) < 50

    def test_trial_recovers_planted_offset(self, small_cal):
        cfg, sync, layout, cal = small_cal
        for trial in range(4):
            rows = run_offset_trial(cfg, cal, sync, layout, (1, 2),
                                    _seed_int(cfg.seed, 1, trial))
            for row in rows:
                assert row["success_truth"], row
                assert row["qber"] < 0.02
        assert {r["k"] for r in rows} == {1, 2}

    def test_trials_deterministic(self, small_cal):
        cfg, sync, layout, cal = small_cal
        a = run_offset_trial(cfg, cal, sync, layout, (1,), 12345)
        b = run_offset_trial(cfg, cal, sync, layout, (1,), 12345)
        assert a == b


class TestRunners:
    def test_table1_smoke(self):
        cfg = ExperimentConfig(**SMALL, seed=2, trials=3, calib_detections=20_000,
                               losses=(17.6, 26.5))
        result = run_table1(cfg)
        assert len(result["summary"]) == 2
        for agg in result["summary"]:
            assert abs(agg["tau_b_hat"] / agg["tau_b_true"] - 1) < 1e-9
            assert agg["p_s_truth"] == 1.0
            assert agg["qber_mean_success"] < 0.02
        ks = {r["k"] for r in result["rows"]}
        assert ks == {1, 8}

    def test_table2_smoke_and_determinism(self, tmp_path):
        cfg = ExperimentConfig(**SMALL, seed=2, trials=3, calib_detections=20_000,
                               k_values=(1, 2), losses=(26.5,))
        r1 = run_table2(cfg)
        r2 = run_table2(cfg)
        assert r1["rows"] == r2["rows"]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_rows_csv(p1, TRIAL_FIELDS, r1["rows"])
        write_rows_csv(p2, TRIAL_FIELDS, r2["rows"])
        assert p1.read_bytes() == p2.read_bytes()
        assert len(r1["rows"]) == 3 * 2

    def test_oracle_equivalence_smoke(self):
        report = run_oracle_equivalence(n_cases=30, seed=4)
        assert report["all_agree"], report["mismatches"]


class TestCsvFormatting:
    def test_nan_and_bool_formatting(self, tmp_path):
        rows = [{"a": float("nan"), "b": True, "c": 0.123456789012345, "d": 7}]
        path = tmp_path / "x.csv"
        write_rows_csv(path, ["a", "b", "c", "d"], rows)
        assert path.read_text().splitlines()[1] == ",1,0.123456789,7"
