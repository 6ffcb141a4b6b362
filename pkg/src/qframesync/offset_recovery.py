"""Receiver string construction and time-offset search.

The receiver slots its gated, delay-compensated detections onto the
recovered pulse grid and writes a ternary string: +1 for an H click, -1
for a V click, 0 for X-basis clicks, empty slots, and conflicting Z
clicks. Splitting that string into ``M+1`` interleaved rows puts every
sync-bearing slot into exactly one row; that row is a (lossy) circular
shift of the public string, so a cross-correlation over (row, shift)
recovers the frame offset.

Index conventions (normative, shared with :mod:`qframesync.framing`):
``delta`` is the position of the sender's frame boundary inside the
receiver's window, i.e. receiver window position ``q`` carries sender
frame position ``(q - delta) mod frame_len``. The aligned case gives
``(i_opt, u_opt, j_opt) = (1, 0, 0)`` and offset 0, and in general

    delta = (i_opt - 1) + (M+1) * (u_opt + L1 * j_opt),
    offset_time = tau_b * delta.

``find_offset`` evaluates the class-decomposed FFT correlation for every
row exhaustively, which is integer-exact and provably identical (argmax
and tie order) to the brute-force direct correlation in
``direct_offset_search``. The published two-stage shortcut - correlating
the per-row DC column first and only then resolving the peak column - is
available with ``prescreen="dc"``; it is faster on streaming hardware but
can disagree with the exact search on noise-dominated input, so the
exhaustive form is the default.

Under loss, ``accumulate_frames`` merges the same positions of K
consecutive frames by majority vote (ties discard to 0): the sync bits
repeat every frame, so votes reinforce them while refreshed random bits
cancel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .channel import DetectionStream
from .clock_recovery import PeriodEstimate
from .errors import LayoutMismatchError, ParameterError
from .framing import FrameLayout
from .sync_string import SyncString


@dataclass(frozen=True)
class ReceivedString:
    values: np.ndarray  # int8 in {-1, 0, +1}
    start_time: float
    layout: FrameLayout
    tau_b: float
    n_skipped: int = 0


@dataclass(frozen=True)
class RowDecomposition:
    rows: np.ndarray  # int8, shape (M+1, L)
    layout: FrameLayout
    tau_b: float


@dataclass(frozen=True)
class AccumulatedString:
    values: np.ndarray
    k: int
    fill_fraction: float
    start_time: float
    layout: FrameLayout
    tau_b: float


@dataclass(frozen=True)
class OffsetResult:
    i_opt: int  # 1-based row index in [1, M+1]
    u_opt: int
    j_opt: int
    offset_slots: int
    offset_time_ps: float
    confidence: float
    success: bool
    class_scores: np.ndarray | None = field(default=None, repr=False)


def build_received_string(
    stream: DetectionStream,
    est: PeriodEstimate,
    start: float,
    layout: FrameLayout,
    n_slots: int | None = None,
) -> ReceivedString:
    """Slot the stream onto the grid anchored at ``start``.

    ``start`` must lie on the recovered pulse grid (any gated detection's
    timestamp does). Records outside [0, n_slots) are skipped and counted.
    """
    if n_slots is None:
        n_slots = layout.frame_len
    slots = np.rint((stream.t - start) / est.tau_b).astype(np.int64)
    in_range = (slots >= 0) & (slots < n_slots)
    z_basis = stream.det < 2
    sel = in_range & z_basis
    signs = np.where(stream.det[sel] == 0, 1, -1).astype(np.int8)
    values = kernels.merge_slot_votes(slots[sel], signs, int(n_slots))
    return ReceivedString(
        values=values,
        start_time=float(start),
        layout=layout,
        tau_b=est.tau_b,
        n_skipped=int((~in_range).sum()),
    )


def separate_rows(s) -> RowDecomposition:
    """Deinterleave M+1 adjacent slots into rows (row r, col c = values[c*(M+1)+r])."""
    layout: FrameLayout = s.layout
    values = np.asarray(s.values)
    if values.size != layout.frame_len:
        raise LayoutMismatchError(
            f"string length {values.size} != frame length {layout.frame_len}"
        )
    rows = values.reshape(layout.string_len, layout.m + 1).T
    return RowDecomposition(rows=np.ascontiguousarray(rows), layout=layout, tau_b=s.tau_b)


def sync_frame_template(s: SyncString, layout: FrameLayout) -> np.ndarray:
    """Frame-length template: sync bits at their slots, 0 in random slots."""
    template = np.zeros(layout.frame_len, dtype=np.int8)
    template[:: layout.m + 1] = s.bits
    return template


def _row_correlation(row: np.ndarray, sa_spectrum: np.ndarray, length: int) -> np.ndarray:
    """scores[d] = sum_c row[c] * s_a[(c - d) mod L], rounded back to exact integers."""
    fb = np.fft.rfft(row.astype(np.float64))
    return np.rint(np.fft.irfft(np.conj(sa_spectrum) * fb, n=length)).astype(np.int64)


def _confidence(class_scores: np.ndarray, j_opt: int) -> float:
    peak = float(class_scores[j_opt])
    others = np.delete(class_scores, j_opt).astype(np.float64)
    if others.size < 2:
        return math.inf if peak > 0 else 0.0
    std = float(others.std())
    if std == 0.0:
        if peak > float(others.mean()):
            return math.inf
        return 0.0
    return (peak - float(others.mean())) / std


def find_offset(
    rows: RowDecomposition,
    s: SyncString,
    threshold: float = 10.0,
    prescreen: str | None = None,
    return_scores: bool = False,
) -> OffsetResult:
    """Locate (i_opt, u_opt, j_opt) by cross-correlating rows with the string.

    Default: exact search over all (M+1) * L cyclic shifts via one FFT
    correlation per row, ties resolved toward the smallest total offset.
    ``prescreen="dc"`` first picks (row, sub-period shift) from the
    correlation of per-row column sums (the fast two-stage flow) and only
    resolves the peak column within that class.
    """
    layout = rows.layout
    if layout.string_len != len(s):
        raise LayoutMismatchError("row length does not match sync string length")
    sub = s.params.sub_len
    n_peaks = s.params.n_peaks
    m1 = layout.m + 1
    length = layout.string_len
    sa = s.bits.astype(np.float64)
    fa = np.fft.rfft(sa)

    if prescreen == "dc":
        # Stage 1: per-row sums over the peak-period classes; the correct
        # row's column profile is a cyclic shift of the string's.
        col_a = sa.reshape(n_peaks, sub).sum(axis=0)
        fca = np.fft.rfft(col_a)
        best = None
        for r in range(m1):
            col_b = rows.rows[r].astype(np.float64).reshape(n_peaks, sub).sum(axis=0)
            c = np.fft.irfft(np.conj(fca) * np.fft.rfft(col_b), n=sub)
            u = int(np.argmax(c))
            if best is None or c[u] > best[0]:
                best = (float(c[u]), r, u)
        _, r_opt, u_opt = best
        scores_r = _row_correlation(rows.rows[r_opt], fa, length)
        class_scores = scores_r[u_opt::sub]
        j_opt = int(np.argmax(class_scores))
        delta = r_opt + m1 * (u_opt + sub * j_opt)
    elif prescreen is None:
        total = np.empty(layout.frame_len, dtype=np.int64)
        per_row = []
        for r in range(m1):
            scores_r = _row_correlation(rows.rows[r], fa, length)
            per_row.append(scores_r)
            total[r::m1] = scores_r
        delta = int(np.argmax(total))
        r_opt = delta % m1
        shift = delta // m1
        u_opt = shift % sub
        j_opt = shift // sub
        class_scores = per_row[r_opt][u_opt::sub]
    else:
        raise ParameterError(f"unknown prescreen mode {prescreen!r}")

    confidence = _confidence(class_scores, j_opt)
    result = OffsetResult(
        i_opt=r_opt + 1,
        u_opt=int(u_opt),
        j_opt=int(j_opt),
        offset_slots=int(delta),
        offset_time_ps=rows.tau_b * float(delta),
        confidence=confidence,
        success=bool(confidence >= threshold),
        class_scores=class_scores.copy() if return_scores else None,
    )
    return result


def direct_offset_search(values: np.ndarray, s: SyncString, layout: FrameLayout):
    """Brute-force reference: direct correlation against the frame template
    at every shift. Returns (argmax shift, full score array)."""
    values = np.asarray(values, dtype=np.int8)
    if values.size != layout.frame_len:
        raise LayoutMismatchError(
            f"string length {values.size} != frame length {layout.frame_len}"
        )
    template = sync_frame_template(s, layout)
    scores = kernels.direct_correlation_scores(values, template)
    return int(np.argmax(scores)), scores


def accumulate_frames(frame_strings, k: int | None = None) -> AccumulatedString:
    """Majority-vote merge of the first ``k`` frame strings, position-wise.

    Positions empty in all frames stay 0; exact +1/-1 ties discard to 0.
    The vote is order-free.
    """
    frames = list(frame_strings)
    if k is None:
        k = len(frames)
    if k < 1 or k > len(frames):
        raise ParameterError(f"k must be in [1, {len(frames)}], got {k}")
    frames = frames[:k]
    layout = frames[0].layout
    for fr in frames[1:]:
        if fr.layout != layout:
            raise LayoutMismatchError("frames were built with different layouts")
    totals = np.zeros(layout.frame_len, dtype=np.int32)
    for fr in frames:
        totals += fr.values
    values = np.sign(totals).astype(np.int8)
    return AccumulatedString(
        values=values,
        k=k,
        fill_fraction=float(np.mean(values != 0)),
        start_time=frames[0].start_time,
        layout=layout,
        tau_b=frames[0].tau_b,
    )


def build_frame_strings(
    stream: DetectionStream,
    est: PeriodEstimate,
    start: float,
    layout: FrameLayout,
    k: int,
) -> list[ReceivedString]:
    """K consecutive frame-length strings starting at ``start``."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    n_f = layout.frame_len
    merged = build_received_string(stream, est, start, layout, n_slots=k * n_f)
    out = []
    for w in range(k):
        out.append(
            ReceivedString(
                values=merged.values[w * n_f : (w + 1) * n_f],
                start_time=start + w * n_f * est.tau_b,
                layout=layout,
                tau_b=est.tau_b,
                n_skipped=merged.n_skipped if w == 0 else 0,
            )
        )
    return out


def recover_offset_highloss(
    stream: DetectionStream,
    est: PeriodEstimate,
    s: SyncString,
    layout: FrameLayout,
    start: float,
    k: int,
    threshold: float = 10.0,
    prescreen: str | None = None,
) -> OffsetResult:
    """Offset recovery with K-frame accumulation (K=1 is the plain path)."""
    frames = build_frame_strings(stream, est, start, layout, k)
    acc = accumulate_frames(frames, k)
    return find_offset(separate_rows(acc), s, threshold=threshold, prescreen=prescreen)


def offset_result_to_json(result: OffsetResult) -> str:
    return json.dumps(
        {
            "i_opt": result.i_opt,
            "u_opt": result.u_opt,
            "j_opt": result.j_opt,
            "offset_slots": result.offset_slots,
            "offset_ps": result.offset_time_ps,
            "confidence": None if math.isinf(result.confidence) else result.confidence,
            "success": result.success,
        },
        sort_keys=True,
    )
