import dataclasses

import numpy as np
import pytest

from qframesync.channel import (
    ChannelParams,
    ClockModel,
    PathDelays,
    load_stream_csv,
    save_stream_csv,
    scenario_presets,
    transmit,
)
from qframesync.errors import ParameterError
from qframesync.framing import build_layout, build_schedule
from qframesync.sync_string import SyncStringParams, generate_sync_string


@pytest.fixture(scope="module")
def small_setup():
    s = generate_sync_string(SyncStringParams(100, 50, 1.0, 7))  # L = 5000
    layout = build_layout(1, s)
    return s, layout


def make_schedule(layout, s, frames, seed=5):
    return build_schedule(layout, s, frames, seed=seed)


class TestClickStatistics:
    def test_p_click_closed_form(self):
        ch = ChannelParams(loss_db=20.0, mu=1.0, det_eff=1.0)
        assert ch.p_click == pytest.approx(1 - np.exp(-0.01), rel=1e-12)

    def test_empirical_click_fraction(self, small_setup):
        s, layout = small_setup
        ch = ChannelParams(loss_db=20.0, mu=1.0, det_eff=1.0, dark_rate=0.0,
                           z_basis_prob=0.9, e_mis=0.0)
        clock = ClockModel(sigma=0.0)
        n_slots = 1_000_000
        frames = n_slots // layout.frame_len
        sched = make_schedule(layout, s, frames)
        stream = transmit(sched, clock, ch, PathDelays.zero(), seed=2)
        p = ch.p_click
        sigma = np.sqrt(p * (1 - p) * n_slots)
        assert abs(len(stream) - p * n_slots) < 4 * sigma

    def test_extreme_loss_empty(self, small_setup):
        s, layout = small_setup
        ch = ChannelParams(loss_db=200.0, mu=1.0, dark_rate=0.0)
        sched = make_schedule(layout, s, 1)
        stream = transmit(sched, ClockModel(), ch, PathDelays.zero(), seed=3)
        assert len(stream) == 0

    def test_dark_fraction(self, small_setup):
        s, layout = small_setup
        ch = ChannelParams(loss_db=200.0, mu=1.0, dark_rate=1e-3)
        sched = make_schedule(layout, s, 20)
        stream = transmit(sched, ClockModel(), ch, PathDelays.zero(), seed=4)
        n_slots = sched.total_pulses
        expected = 4 * n_slots * ch.dark_rate
        assert abs(len(stream) - expected) < 4 * np.sqrt(expected)
        assert np.all(stream.truth_kind == 2)
        assert np.all(stream.truth_slot == -1)


class TestClock:
    def test_receiver_period_value(self):
        clock = ClockModel(tau_a=20000.0, rho=9.25e-7)
        assert clock.tau_b == pytest.approx(20000.0185, abs=1e-9)

    def test_rho_bound(self):
        with pytest.raises(ParameterError):
            ClockModel(rho=2e-3)

    def test_noiseless_grid(self, small_setup):
        s, layout = small_setup
        clock = ClockModel(tau_a=20000.0, rho=9.25e-7, t0=12345.0, sigma=0.0)
        ch = ChannelParams(loss_db=10.0, mu=1.0, det_eff=1.0, dark_rate=0.0)
        sched = make_schedule(layout, s, 4)
        stream = transmit(sched, clock, ch, PathDelays.zero(), seed=5)
        assert len(stream) > 100
        n = np.rint((stream.t - clock.t0) / clock.tau_b)
        resid = stream.t - clock.t0 - n * clock.tau_b
        assert np.max(np.abs(resid)) <= 0.5

    def test_truth_slots_match_grid(self, small_setup):
        s, layout = small_setup
        clock = ClockModel(sigma=0.0, t0=1000.0)
        ch = ChannelParams(loss_db=13.0, mu=1.0, det_eff=1.0, dark_rate=0.0)
        sched = make_schedule(layout, s, 2)
        stream = transmit(sched, clock, ch, PathDelays.zero(), seed=6)
        n = np.rint((stream.t - clock.t0) / clock.tau_b).astype(np.int64)
        assert np.array_equal(n, stream.truth_slot)


class TestStreamProperties:
    def test_sorted_and_deterministic(self, small_setup):
        s, layout = small_setup
        clock, ch, delays = scenario_presets("table1_loss17.6")
        sched = make_schedule(layout, s, 4)
        a = transmit(sched, clock, ch, delays, seed=7)
        b = transmit(sched, clock, ch, delays, seed=7)
        assert np.all(np.diff(a.t) >= 0)
        assert np.array_equal(a.t, b.t)
        assert np.array_equal(a.det, b.det)
        assert np.array_equal(a.truth_slot, b.truth_slot)

    def test_z_basis_fraction(self, small_setup):
        s, layout = small_setup
        clock, ch, delays = scenario_presets("table1_loss17.6")
        sched = make_schedule(layout, s, 30)
        stream = transmit(sched, clock, ch, delays, seed=8)
        signal = stream.truth_kind != 2
        frac_z = np.mean(stream.det[signal] < 2)
        n = signal.sum()
        assert abs(frac_z - 0.9) < 4 * np.sqrt(0.9 * 0.1 / n)

    def test_sync_slot_mapping_error_free(self, small_setup):
        # e_mis = 0: Z-measured sync pulses always land on the encoded detector.
        s, layout = small_setup
        clock = ClockModel(sigma=0.0)
        ch = ChannelParams(loss_db=10.0, mu=1.0, det_eff=1.0, dark_rate=0.0,
                           z_basis_prob=0.9, e_mis=0.0)
        sched = make_schedule(layout, s, 2)
        stream = transmit(sched, clock, ch, PathDelays.zero(), seed=9)
        sync_z = (stream.truth_kind == 0) & (stream.det < 2)
        slots = stream.truth_slot[sync_z] % layout.frame_len
        bits = s.bits[slots // (layout.m + 1)]
        expected_det = np.where(bits > 0, 0, 1)
        assert np.array_equal(stream.det[sync_z], expected_det)

    def test_path_delays_applied(self, small_setup):
        s, layout = small_setup
        clock = ClockModel(sigma=0.0)
        ch = ChannelParams(loss_db=6.0, mu=1.0, det_eff=1.0, dark_rate=0.0)
        delays = PathDelays.from_mapping({"H": 0.0, "V": 650.0, "D": 1480.0, "A": 1010.0})
        sched = make_schedule(layout, s, 2)
        stream = transmit(sched, clock, ch, delays, seed=10)
        phase = np.mod((stream.t - clock.t0).astype(float), clock.tau_b)
        phase = np.where(phase > clock.tau_b / 2, phase - clock.tau_b, phase)
        for d in range(4):
            sel = stream.det == d
            assert sel.sum() > 50
            assert np.median(phase[sel]) == pytest.approx(delays.delays_ps[d], abs=1.0)


class TestPresets:
    def test_table1_values(self):
        clock, ch, delays = scenario_presets("table1_loss17.6")
        assert ch.loss_db == 17.6
        assert ch.mu == 1.0
        assert ch.det_eff == pytest.approx(0.513)
        assert ch.dark_rate == pytest.approx(2e-6)
        assert ch.z_basis_prob == pytest.approx(0.9)
        assert clock.rho == pytest.approx(9.25e-7)

    def test_fig4_delay_values(self):
        _, _, delays = scenario_presets("fig4_delays")
        assert delays.as_mapping() == {"H": 0.0, "V": 650.0, "D": 1480.0, "A": 1010.0}

    def test_ideal(self):
        clock, ch, delays = scenario_presets("ideal")
        assert ch.loss_db == 0.0
        assert clock.sigma == 0.0
        assert np.all(delays.delays_ps == 0.0)

    def test_unknown_preset(self):
        with pytest.raises(ParameterError):
            scenario_presets("nope")
        with pytest.raises(ParameterError):
            scenario_presets("table1_loss12.0")


class TestCsvRoundTrip:
    def test_with_truth(self, small_setup, tmp_path):
        s, layout = small_setup
        clock, ch, delays = scenario_presets("table1_loss17.6")
        sched = make_schedule(layout, s, 2)
        stream = transmit(sched, clock, ch, delays, seed=11)
        path = tmp_path / "det.csv"
        save_stream_csv(stream, path, sidecar={"clock": dataclasses.asdict(clock)})
        loaded = load_stream_csv(path)
        assert np.array_equal(loaded.t, stream.t)
        assert np.array_equal(loaded.det, stream.det)
        assert np.array_equal(loaded.truth_slot, stream.truth_slot)
        assert np.array_equal(loaded.truth_kind, stream.truth_kind)
        assert (tmp_path / "det.csv.meta.json").exists()

    def test_without_truth_columns(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("t_ps,detector\n100,H\n300,V\n250,D\n")
        loaded = load_stream_csv(path)
        assert loaded.t.tolist() == [100, 250, 300]  # sorted
        assert not loaded.has_truth
