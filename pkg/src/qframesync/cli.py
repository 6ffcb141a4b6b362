"""Command-line interface.

Subcommands: ``gen`` (sync string / schedule files), ``simulate``
(detection CSV from a preset or schedule), ``recover`` (offset from a
detection CSV), ``experiment`` (table1 | table2 | continuous | fig4) and
``selftest`` (oracle-equivalence suite).

A JSON config file (``--config``) may preset any experiment knob; explicit
flags override it. Schema (all keys optional)::

    {
      "config_version": 1,
      "string": {"sub_len": 1000, "n_peaks": 100, "lam": 1.0, "seed": 11},
      "layout": {"m": 1},
      "experiment": {"trials": 50, "seed": 0, "k_values": [1, 2, 4, 8],
                      "threshold": 10.0, "sigma_g": 50.0, "workers": 1,
                      "duration_s": 12.0}
    }
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .channel import load_stream_csv, save_stream_csv, scenario_presets, transmit
from .clock_recovery import (
    GateConfig,
    coarse_period_fft,
    compensate_delays,
    estimate_path_delays,
    gate_filter,
    refine_period_lts,
)
from .errors import MissingDetectorError
from .framing import build_layout, build_schedule, load_schedule, save_schedule
from .harness import (
    CONTINUOUS_FIELDS,
    SUMMARY_FIELDS,
    TRIAL_FIELDS,
    ExperimentConfig,
    phase_anchor,
    run_continuous_comparison,
    run_oracle_equivalence,
    run_table1,
    run_table2,
    write_rows_csv,
)
from .offset_recovery import offset_result_to_json, recover_offset_highloss
from .sync_string import (
    SyncStringParams,
    generate_sync_string,
    load_sync_string,
    save_sync_string,
)

CONFIG_VERSION = 1


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        cfg = json.load(f)
    version = cfg.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise SystemExit(f"unsupported config_version {version} (expected {CONFIG_VERSION})")
    return cfg


def _experiment_config(args, file_cfg: dict) -> ExperimentConfig:
    string_cfg = file_cfg.get("string", {})
    layout_cfg = file_cfg.get("layout", {})
    exp_cfg = file_cfg.get("experiment", {})
    merged = dict(
        sub_len=string_cfg.get("sub_len", 1000),
        n_peaks=string_cfg.get("n_peaks", 100),
        lam=string_cfg.get("lam", 1.0),
        string_seed=string_cfg.get("seed", 11),
        m=layout_cfg.get("m", 1),
        seed=exp_cfg.get("seed", 0),
        trials=exp_cfg.get("trials", 50),
        k_values=tuple(exp_cfg.get("k_values", (1, 2, 4, 8))),
        threshold=exp_cfg.get("threshold", 10.0),
        sigma_g=exp_cfg.get("sigma_g", 50.0),
        workers=exp_cfg.get("workers", 1),
        duration_s=exp_cfg.get("duration_s", 12.0),
    )
    overrides = {
        "seed": args.seed,
        "trials": args.trials,
        "workers": args.workers,
        "sub_len": getattr(args, "l1", None),
        "n_peaks": getattr(args, "n1", None),
        "m": getattr(args, "m", None),
        "duration_s": getattr(args, "duration", None),
        "threshold": getattr(args, "threshold", None),
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    if getattr(args, "k_values", None):
        merged["k_values"] = tuple(int(k) for k in args.k_values.split(","))
    if getattr(args, "losses", None):
        merged["losses"] = tuple(float(x) for x in args.losses.split(","))
    return ExperimentConfig(**merged)


def _cmd_gen(args) -> int:
    params = SyncStringParams(args.l1, args.n1, args.lam, args.seed)
    s = generate_sync_string(params)
    save_sync_string(s, args.out)
    print(f"wrote sync string (L={len(s)}) to {args.out}")
    if args.schedule:
        layout = build_layout(args.m, s)
        schedule = build_schedule(layout, s, args.frames, args.schedule_seed,
                                  sync_mode=args.sync_mode)
        save_schedule(schedule, args.schedule)
        print(f"wrote schedule ({schedule.total_pulses} pulses) to {args.schedule}")
    return 0


def _cmd_simulate(args) -> int:
    clock, ch, delays = scenario_presets(args.preset)
    if args.schedule:
        schedule = load_schedule(args.schedule)
    else:
        params = SyncStringParams(args.l1, args.n1, args.lam, args.string_seed)
        s = generate_sync_string(params)
        layout = build_layout(args.m, s)
        frames = args.frames
        schedule = build_schedule(layout, s, frames, args.schedule_seed)
    n_slots = args.slots or schedule.total_pulses
    stream = transmit(schedule, clock, ch, delays, seed=args.seed, n_slots=n_slots)
    sidecar = {
        "preset": args.preset,
        "seed": args.seed,
        "n_slots": n_slots,
        "clock": dataclasses.asdict(clock),
        "channel": dataclasses.asdict(ch),
        "delays_ps": delays.as_mapping(),
        "layout": {"m": schedule.layout.m, "string_len": schedule.layout.string_len},
    }
    save_stream_csv(stream, args.out, sidecar=sidecar)
    print(f"wrote {len(stream)} detections to {args.out}")
    return 0


def _cmd_recover(args) -> int:
    stream = load_stream_csv(args.detections)
    s = load_sync_string(args.sync)
    layout = build_layout(args.m, s)
    tau0 = coarse_period_fft(stream, args.tau_a)
    est = refine_period_lts(stream, tau0)
    try:
        delays = estimate_path_delays(stream, est)
        stream = compensate_delays(stream, delays)
        est = refine_period_lts(stream, est.tau_b)
    except MissingDetectorError as exc:
        print(f"skipping path-delay compensation: {exc}", file=sys.stderr)
    gate = GateConfig(sigma_g=args.sigma_g)
    anchor = phase_anchor(stream, est.tau_b)
    gated = gate_filter(stream, est, gate, phase_ref=anchor)
    start = float(gated.t[0])
    result = recover_offset_highloss(gated, est, s, layout, start, args.k,
                                     threshold=args.threshold)
    payload = offset_result_to_json(result)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    print(payload)
    return 0 if result.success else 3


def _cmd_experiment(args) -> int:
    cfg = _experiment_config(args, _load_config(args.config))
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.which == "table1":
        result = run_table1(cfg)
        write_rows_csv(outdir / "table1_trials.csv", TRIAL_FIELDS, result["rows"])
        write_rows_csv(outdir / "table1_summary.csv", SUMMARY_FIELDS, result["summary"])
        _write_summary_json(outdir / "table1_summary.json", cfg, result["summary"])
    elif args.which == "table2":
        result = run_table2(cfg)
        write_rows_csv(outdir / "table2_trials.csv", TRIAL_FIELDS, result["rows"])
        write_rows_csv(outdir / "table2_summary.csv", SUMMARY_FIELDS, result["summary"])
        _write_summary_json(outdir / "table2_summary.json", cfg, result["summary"])
    elif args.which == "continuous":
        series = run_continuous_comparison(cfg)
        rows = [row for mode in ("distributed", "start_only") for row in series[mode]]
        write_rows_csv(outdir / "continuous_series.csv", CONTINUOUS_FIELDS, rows)
        _write_summary_json(outdir / "continuous_summary.json", cfg, _continuous_digest(series))
    elif args.which == "fig4":
        from .harness import fig4_residual_rows

        rows, delays = fig4_residual_rows(cfg)
        write_rows_csv(outdir / "fig4_residuals.csv",
                       ["detector", "bin_left_ps", "bin_right_ps", "count"], rows)
        (outdir / "fig4_delays.json").write_text(json.dumps(delays, indent=2, sort_keys=True))
    else:  # pragma: no cover - argparse restricts choices
        raise SystemExit(f"unknown experiment {args.which}")
    print(f"results written to {outdir}")
    return 0


def _continuous_digest(series: dict) -> list[dict]:
    digest = []
    for mode, rows in series.items():
        qbers = [r["qber"] for r in rows if not math.isnan(r.get("qber", float("nan")))]
        errs = [r["time_error_ps"] for r in rows
                if not math.isnan(r.get("time_error_ps", float("nan")))]
        digest.append({
            "mode": mode,
            "windows": len(rows),
            "qber_final": qbers[-1] if qbers else None,
            "qber_max": max(qbers) if qbers else None,
            "time_error_max_ps": max(errs) if errs else None,
        })
    return digest


def _write_summary_json(path: Path, cfg: ExperimentConfig, summary) -> None:
    payload = {
        "config": dataclasses.asdict(cfg),
        "summary": summary,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        value = float(obj)
        return None if math.isnan(value) else value
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


def _cmd_selftest(args) -> int:
    report = run_oracle_equivalence(n_cases=args.cases, seed=args.seed)
    status = "ok" if report["all_agree"] else "FAILED"
    print(f"oracle equivalence: {report['n_agree']}/{report['n_cases']} agree [{status}]")
    for miss in report["mismatches"][:10]:
        print(f"  mismatch: {miss}")
    return 0 if report["all_agree"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qframesync",
                                description="Frame synchronization toolkit for pulsed "
                                            "photon-counting links")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate sync string (and optionally a schedule) files")
    g.add_argument("--out", required=True)
    g.add_argument("--l1", type=int, default=1000, help="sub-period length")
    g.add_argument("--n1", type=int, default=100, help="number of periodic peaks")
    g.add_argument("--lam", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=11)
    g.add_argument("--schedule", help="also write a pulse schedule to this path")
    g.add_argument("--m", type=int, default=1, help="random bits per sync bit")
    g.add_argument("--frames", type=int, default=1)
    g.add_argument("--schedule-seed", type=int, default=0)
    g.add_argument("--sync-mode", choices=("all", "first_frame_only"), default="all")
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("simulate", help="simulate a detection stream to CSV")
    s.add_argument("--preset", default="table1_loss20.0")
    s.add_argument("--schedule", help="schedule file (otherwise generated from flags)")
    s.add_argument("--l1", type=int, default=1000)
    s.add_argument("--n1", type=int, default=100)
    s.add_argument("--lam", type=float, default=1.0)
    s.add_argument("--string-seed", type=int, default=11)
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--frames", type=int, default=4)
    s.add_argument("--schedule-seed", type=int, default=0)
    s.add_argument("--slots", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate)

    r = sub.add_parser("recover", help="recover period and frame offset from a detection CSV")
    r.add_argument("detections")
    r.add_argument("--sync", required=True, help="sync string file")
    r.add_argument("--m", type=int, default=1)
    r.add_argument("--k", type=int, default=1, help="frames to accumulate")
    r.add_argument("--tau-a", type=float, default=20000.0, help="nominal pulse period (ps)")
    r.add_argument("--sigma-g", type=float, default=50.0)
    r.add_argument("--threshold", type=float, default=10.0)
    r.add_argument("--out", help="write the offset result JSON here")
    r.set_defaults(func=_cmd_recover)

    e = sub.add_parser("experiment", help="run a full experiment and write CSV/JSON results")
    e.add_argument("which", choices=("table1", "table2", "continuous", "fig4"))
    e.add_argument("--config", help="JSON config file")
    e.add_argument("--outdir", default="results")
    e.add_argument("--trials", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--k-values", help="comma-separated accumulation depths, e.g. 1,2,4,8")
    e.add_argument("--losses", help="comma-separated losses in dB")
    e.add_argument("--l1", type=int)
    e.add_argument("--n1", type=int)
    e.add_argument("--m", type=int)
    e.add_argument("--threshold", type=float)
    e.add_argument("--duration", type=float, help="continuous-run duration (s)")
    e.set_defaults(func=_cmd_experiment)

    t = sub.add_parser("selftest", help="run the oracle-equivalence suite")
    t.add_argument("--cases", type=int, default=60)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
