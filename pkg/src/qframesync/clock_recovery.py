"""Receiver-side clock recovery from raw timestamps.

Three stages, all blind to ground truth:

1. ``coarse_period_fft``: occupancy-bin the timestamps at four bins per
   nominal period and locate the pulse-rate line in the magnitude spectrum.
   Accuracy is one FFT bin (~4/n_bins relative), nowhere near good enough
   on its own.
2. ``refine_period_lts``: the phase ``t mod tau_b0`` drifts linearly with a
   slope equal to the relative period error. Segment-wise circular centers
   stitch the wrapped phase into a line; a least-trimmed-squares fit of the
   unwrapped phase against time gives slope ``k`` and the refined period
   ``tau_b0 / (1 - k)``, immune to dark counts.
3. ``gate_filter`` / ``estimate_path_delays`` / ``compensate_delays``:
   discard events outside the timing gate and remove the constant
   per-detector electronics delays (referenced to H).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import DetectionStream, PathDelays
from .errors import (
    EmptyGateError,
    InsufficientDataError,
    MissingDetectorError,
    NoSpectralPeakError,
    ParameterError,
    UnwrapError,
)
from .framing import DET_LABELS
from .lts import fit_line_lts, fit_line_ols


@dataclass(frozen=True)
class GateConfig:
    """Acceptance gate half-width is accept_sigma * sigma_g picoseconds."""

    sigma_g: float = 50.0
    d_window: int | None = None

    def __post_init__(self) -> None:
        if self.sigma_g <= 0:
            raise ParameterError("sigma_g must be positive")


@dataclass(frozen=True)
class PeriodFitReport:
    segment_time: np.ndarray
    segment_center: np.ndarray
    segment_count: np.ndarray
    intercept: float
    n_inliers: int
    residuals: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class PeriodEstimate:
    tau_b0: float
    k: float
    tau_b: float
    n_samples: int
    residual_std: float
    report: PeriodFitReport | None = field(default=None, repr=False)


def _centered_mod(values: np.ndarray, period: float) -> np.ndarray:
    """Map to (-period/2, period/2]."""
    half = period / 2.0
    return half - np.mod(half - values, period)


def coarse_period_fft(
    stream: DetectionStream,
    tau_a_hint: float,
    n_bins: int = 1_000_000,
    search_halfwidth: float = 0.01,
    min_peak_ratio: float = 6.0,
    min_detections: int = 100,
) -> float:
    """Initial period estimate from the periodogram of binned arrival times.

    Uses at most ``n_bins`` occupancy bins of width ``tau_a_hint / 4`` from
    the start of the stream and searches a +-1% window around the expected
    pulse rate. Raises ``NoSpectralPeakError`` when the best candidate does
    not stand clear of the local noise floor.
    """
    if len(stream) < min_detections:
        raise InsufficientDataError(
            f"period search needs >= {min_detections} detections, got {len(stream)}"
        )
    bin_w = tau_a_hint / 4.0
    t_rel = (stream.t - stream.t[0]).astype(np.float64)
    span_bins = int(t_rel[-1] / bin_w)
    n_eff = min(int(n_bins), span_bins)
    if n_eff < 4096:
        raise InsufficientDataError(
            f"stream spans only {span_bins} occupancy bins; need >= 4096"
        )
    idx = (t_rel / bin_w).astype(np.int64)
    idx = idx[idx < n_eff]
    counts = np.bincount(idx, minlength=n_eff).astype(np.float64)
    magnitude = np.abs(np.fft.rfft(counts))

    k_center = n_eff * bin_w / tau_a_hint
    lo = max(1, int(np.floor(k_center * (1.0 - search_halfwidth))))
    hi = min(magnitude.size - 1, int(np.ceil(k_center * (1.0 + search_halfwidth))))
    if hi <= lo:
        raise InsufficientDataError("search window is empty; check tau_a_hint")
    window = magnitude[lo : hi + 1]
    k_peak = lo + int(np.argmax(window))
    floor = float(np.median(window))
    if floor <= 0 or float(magnitude[k_peak]) < min_peak_ratio * floor:
        raise NoSpectralPeakError(
            f"no spectral peak above noise floor (ratio "
            f"{float(magnitude[k_peak]) / floor if floor else float('inf'):.2f} "
            f"< {min_peak_ratio})"
        )
    return n_eff * bin_w / k_peak


def refine_period_lts(
    stream: DetectionStream,
    tau_b0: float,
    trim_fraction: float = 0.5,
    max_rel_error: float = 1e-5,
    max_iter: int = 50,
    min_detections: int = 100,
) -> PeriodEstimate:
    """Refine ``tau_b0`` to sub-1e-10 relative accuracy.

    ``max_rel_error`` bounds how wrong ``tau_b0`` may be; segments are
    sized so the phase drifts less than a quarter period inside each.
    """
    n = len(stream)
    if n < min_detections:
        raise InsufficientDataError(
            f"period refinement needs >= {min_detections} detections, got {n}"
        )
    tau = float(tau_b0)
    t_rel = (stream.t - stream.t[0]).astype(np.float64)
    phase = np.mod(t_rel, tau)

    seg_span = tau / (4.0 * max_rel_error)
    seg_id = (t_rel / seg_span).astype(np.int64)
    n_seg = int(seg_id[-1]) + 1
    angle = phase * (2.0 * np.pi / tau)
    re = np.bincount(seg_id, weights=np.cos(angle), minlength=n_seg)
    im = np.bincount(seg_id, weights=np.sin(angle), minlength=n_seg)
    count = np.bincount(seg_id, minlength=n_seg)
    t_sum = np.bincount(seg_id, weights=t_rel, minlength=n_seg)
    occupied = count > 0
    if occupied.sum() < 2:
        # Single segment: no stitching needed, fit the raw phase directly.
        centers = np.array([np.arctan2(im[occupied], re[occupied])[0]]) * tau / (2 * np.pi)
        seg_t = np.array([t_sum[occupied][0] / count[occupied][0]])
        k_init, b_init = 0.0, float(np.mod(centers[0], tau))
    else:
        centers = np.mod(np.arctan2(im[occupied], re[occupied]) * tau / (2 * np.pi), tau)
        seg_t = t_sum[occupied] / count[occupied]
        # Sequential nearest-wrap stitching of the segment centers.
        unwrapped = centers.copy()
        for i in range(1, unwrapped.size):
            unwrapped[i] += tau * np.round((unwrapped[i - 1] - unwrapped[i]) / tau)
        k_init, b_init = fit_line_ols(seg_t, unwrapped)

    pred = b_init + k_init * t_rel
    resid = _centered_mod(phase - pred, tau)
    unwrapped_phase = pred + resid

    fit = fit_line_lts(
        t_rel, unwrapped_phase, trim_fraction=trim_fraction, max_iter=max_iter,
        init=(k_init, b_init),
    )
    k = fit.slope
    if abs(k) >= 1e-3:
        raise UnwrapError(
            f"fitted phase slope {k:.3e} is implausibly large; coarse period too far off"
        )
    inl = fit.inliers
    final_resid = unwrapped_phase[inl] - fit.predict(t_rel[inl])
    resid_std = float(final_resid.std())
    if resid_std > tau / 8.0:
        raise UnwrapError("phase residuals of the trimmed fit span a large fraction of the period")
    report = PeriodFitReport(
        segment_time=seg_t,
        segment_center=centers,
        segment_count=count[occupied],
        intercept=fit.intercept,
        n_inliers=int(inl.sum()),
        residuals=final_resid,
    )
    return PeriodEstimate(
        tau_b0=tau,
        k=float(k),
        tau_b=tau / (1.0 - k),
        n_samples=n,
        residual_std=resid_std,
        report=report,
    )


def gate_filter(
    stream: DetectionStream,
    est: PeriodEstimate,
    gate: GateConfig,
    phase_ref: float,
    accept_sigma: float = 3.0,
) -> DetectionStream:
    """Keep detections whose phase residual against the recovered grid is
    within ``accept_sigma * sigma_g``; everything else is noise."""
    resid = _centered_mod((stream.t - phase_ref).astype(np.float64), est.tau_b)
    keep = np.abs(resid) <= accept_sigma * gate.sigma_g
    if not keep.any():
        raise EmptyGateError(
            "no detections inside the gate; period estimate or phase reference is wrong"
        )
    return stream.take(np.flatnonzero(keep))


def interval_error_statistic(
    stream: DetectionStream,
    est: PeriodEstimate,
    phase_ref: float,
    d_window: int | None = None,
) -> float:
    """Mean squared timing error of consecutive detections against the grid.

    Implemented as the variance of the centered phase residuals over a
    window of up to ``d_window + 1`` detections (the pairwise interval-error
    form reduces to this once the common reference offset is removed). For
    a well-gated stream with jitter sigma and gate width sigma_g == sigma
    the value is ~sigma_g**2.
    """
    resid = _centered_mod((stream.t - phase_ref).astype(np.float64), est.tau_b)
    if d_window is not None:
        resid = resid[: d_window + 1]
    if resid.size == 0:
        raise InsufficientDataError("no detections in statistic window")
    return float(np.var(resid))


def estimate_path_delays(
    stream: DetectionStream,
    est: PeriodEstimate,
    min_per_detector: int = 100,
    trim_fraction: float = 0.5,
) -> PathDelays:
    """Per-detector constant delays from the per-channel phase clouds.

    Fits a trimmed line to each detector's phase residuals over time and
    differences the fits at mid-stream, so the result is invariant under
    global time shifts and insensitive to residual period error. Delays
    whose magnitude exceeds a quarter period are reported wrapped and
    flagged ambiguous (a modulo measurement cannot distinguish them).
    """
    tau = est.tau_b
    t_rel = (stream.t - stream.t[0]).astype(np.float64)
    phase = np.mod(t_rel, tau)
    angle = phase * (2.0 * np.pi / tau)
    center = np.arctan2(np.sin(angle).sum(), np.cos(angle).sum()) * tau / (2.0 * np.pi)
    resid = _centered_mod(phase - center, tau)

    counts = np.bincount(stream.det, minlength=4)
    missing = [DET_LABELS[d] for d in range(4) if counts[d] < min_per_detector]
    if missing:
        raise MissingDetectorError(missing)

    t_mid = float(t_rel.mean())
    level = np.zeros(4)
    for d in range(4):
        sel = stream.det == d
        fit = fit_line_lts(t_rel[sel], resid[sel], trim_fraction=trim_fraction)
        level[d] = fit.intercept + fit.slope * t_mid

    delays = _centered_mod(level - level[0], tau)
    delays[0] = 0.0
    ambiguous = tuple(DET_LABELS[d] for d in range(1, 4) if abs(delays[d]) > tau / 4.0)
    return PathDelays(delays_ps=delays, ambiguous=ambiguous)


def compensate_delays(stream: DetectionStream, delays: PathDelays) -> DetectionStream:
    """Subtract each record's per-detector delay and restore time order."""
    shifted = np.rint(stream.t - delays.delays_ps[stream.det]).astype(np.int64)
    out = DetectionStream(shifted, stream.det, stream.truth_slot, stream.truth_kind)
    if shifted.size > 1 and np.any(np.diff(shifted) < 0):
        out = out.sorted()
    return out


def export_diagnostics(est: PeriodEstimate, path_prefix: str) -> None:
    """Write the per-segment fit table and the residual histogram as CSVs."""
    if est.report is None:
        raise ParameterError("PeriodEstimate carries no fit report")
    rep = est.report
    with open(f"{path_prefix}_segments.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t_mid_ps", "phase_center_ps", "n_detections"])
        for t, c, n in zip(rep.segment_time, rep.segment_center, rep.segment_count):
            writer.writerow([f"{t:.3f}", f"{c:.3f}", int(n)])
    scale = max(est.residual_std, 1e-3)
    edges = np.linspace(-5 * scale, 5 * scale, 101)
    hist, _ = np.histogram(rep.residuals, bins=edges)
    with open(f"{path_prefix}_residual_hist.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_left_ps", "bin_right_ps", "count"])
        for i in range(hist.size):
            writer.writerow([f"{edges[i]:.3f}", f"{edges[i + 1]:.3f}", int(hist[i])])
