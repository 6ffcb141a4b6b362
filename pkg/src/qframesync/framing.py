"""Frame assembly: interleave the public sync string into random BB84 bits.

Slot ``p`` of a frame (0-based) is a sync slot iff ``p % (M+1) == 0``, so
sync bit ``i`` sits at slot ``i*(M+1)``. This convention is shared by the
receiver-side row separation in :mod:`qframesync.offset_recovery`; both
sides must agree on it for the recovered offset to mean anything.

Polarization codes are 0=H, 1=V, 2=D, 3=A; basis = code >> 1 (0=Z, 1=X),
bit = code & 1. Sync bits map +1 -> H, -1 -> V. Random slots draw one of
the four BB84 states uniformly (basis and bit independent and unbiased).

Schedules are seed-backed and generate frames on demand, so multi-second
pulse trains never have to be materialized; the random bits of frame ``w``
come from substream ``(seed, w)`` and are therefore refreshed every frame,
while the sync bits repeat verbatim.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ._rng import substream
from .errors import ParameterError
from .sync_string import SyncString, SyncStringParams, nominal_c0

DET_LABELS = ("H", "V", "D", "A")
DET_CODE = {label: i for i, label in enumerate(DET_LABELS)}

KIND_SYNC = 0
KIND_RANDOM = 1

_FORMAT = "qframesync-schedule/1"


@dataclass(frozen=True)
class FrameLayout:
    """Interleaving rule: m random slots follow each sync slot."""

    m: int
    string_len: int
    frame_len: int

    def is_sync_slot(self, p: int) -> bool:
        return p % (self.m + 1) == 0

    def sync_slots(self) -> np.ndarray:
        return np.arange(self.string_len) * (self.m + 1)


@dataclass(frozen=True)
class PulseRecord:
    slot_index: int
    kind: Literal["sync", "random"]
    polarization: Literal["H", "V", "D", "A"]
    basis: Literal["Z", "X"]
    bit: int


def build_layout(m: int, s: SyncString) -> FrameLayout:
    if m < 1:
        raise ParameterError(f"random-to-sync ratio must be >= 1, got {m}")
    length = len(s)
    return FrameLayout(m=m, string_len=length, frame_len=(m + 1) * length)


@dataclass
class FrameSchedule:
    """Pulse schedule for ``frames`` consecutive frames.

    ``sync_mode`` "all" repeats the sync string in every frame (the
    distributed scheme). "first_frame_only" places it only in frame 0 and
    fills later frames entirely with random bits, which models the
    start-of-run synchronization baseline.
    """

    layout: FrameLayout
    sync: SyncString
    frames: int
    seed: int
    sync_mode: Literal["all", "first_frame_only"] = "all"
    _materialized: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def total_pulses(self) -> int:
        return self.frames * self.layout.frame_len

    def frame_has_sync(self, w: int) -> bool:
        return self.sync_mode == "all" or w == 0

    def frame_codes(self, w: int) -> np.ndarray:
        """Polarization codes (uint8, len frame_len) of frame ``w``."""
        if not 0 <= w < self.frames:
            raise ParameterError(f"frame index {w} out of range [0, {self.frames})")
        cached = self._cache.get(w)
        if cached is not None:
            return cached
        n_f = self.layout.frame_len
        if self._materialized is not None:
            codes = self._materialized[w * n_f : (w + 1) * n_f]
        else:
            rng = substream(self.seed, w)
            if self.frame_has_sync(w):
                codes = np.empty(n_f, dtype=np.uint8)
                stride = self.layout.m + 1
                codes[::stride] = np.where(self.sync.bits > 0, DET_CODE["H"], DET_CODE["V"])
                mask = np.ones(n_f, dtype=bool)
                mask[::stride] = False
                codes[mask] = rng.integers(0, 4, size=n_f - self.layout.string_len, dtype=np.uint8)
            else:
                codes = rng.integers(0, 4, size=n_f, dtype=np.uint8)
        if len(self._cache) > 2:
            self._cache.clear()
        self._cache[w] = codes
        return codes

    def slot_kind(self, global_slot: int) -> int:
        w, p = divmod(global_slot, self.layout.frame_len)
        if self.frame_has_sync(w) and p % (self.layout.m + 1) == 0:
            return KIND_SYNC
        return KIND_RANDOM

    def record(self, global_slot: int) -> PulseRecord:
        if not 0 <= global_slot < self.total_pulses:
            raise ParameterError(
                f"slot {global_slot} out of range [0, {self.total_pulses})"
            )
        w, p = divmod(int(global_slot), self.layout.frame_len)
        code = int(self.frame_codes(w)[p])
        kind = "sync" if self.slot_kind(global_slot) == KIND_SYNC else "random"
        return PulseRecord(
            slot_index=int(global_slot),
            kind=kind,
            polarization=DET_LABELS[code],
            basis="Z" if code < 2 else "X",
            bit=code & 1,
        )


def build_schedule(
    layout: FrameLayout,
    s: SyncString,
    frames: int,
    seed: int,
    sync_mode: Literal["all", "first_frame_only"] = "all",
) -> FrameSchedule:
    if frames < 1:
        raise ParameterError(f"frames must be >= 1, got {frames}")
    if layout.string_len != len(s):
        raise ParameterError("layout was built for a different string length")
    return FrameSchedule(layout=layout, sync=s, frames=frames, seed=seed, sync_mode=sync_mode)


def ground_truth_bit(schedule: FrameSchedule, global_slot: int) -> PulseRecord:
    """O(1) lookup of what Alice actually sent in ``global_slot``."""
    return schedule.record(global_slot)


def save_schedule(schedule: FrameSchedule, path) -> None:
    """Header line plus one byte per pulse (bits 0-1 polarization, bit 2 kind)."""
    header = {
        "format": _FORMAT,
        "M": schedule.layout.m,
        "L1": schedule.sync.params.sub_len,
        "N1": schedule.sync.params.n_peaks,
        "lambda": schedule.sync.params.lam,
        "string_seed": schedule.sync.params.seed,
        "seed": schedule.seed,
        "frames": schedule.frames,
        "sync_mode": schedule.sync_mode,
    }
    n_f = schedule.layout.frame_len
    stride = schedule.layout.m + 1
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("ascii"))
        f.write(b"\n")
        for w in range(schedule.frames):
            byte = schedule.frame_codes(w).copy()
            if schedule.frame_has_sync(w):
                is_random = np.ones(n_f, dtype=np.uint8)
                is_random[::stride] = 0
                byte |= is_random << 2
            else:
                byte |= 1 << 2
            f.write(byte.tobytes())


def load_schedule(path) -> FrameSchedule:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("ascii"))
        if header.get("format") != _FORMAT:
            raise ParameterError(f"not a schedule file: {path}")
        payload = np.frombuffer(f.read(), dtype=np.uint8)
    params = SyncStringParams(
        sub_len=int(header["L1"]),
        n_peaks=int(header["N1"]),
        lam=float(header["lambda"]),
        seed=int(header["string_seed"]),
    )
    frames = int(header["frames"])
    m = int(header["M"])
    n_f = (m + 1) * params.length
    if payload.size != frames * n_f:
        raise ParameterError(
            f"schedule payload has {payload.size} pulses, header implies {frames * n_f}"
        )
    codes = (payload & 0x3).astype(np.uint8)
    # Sync bits are authoritative from the payload of frame 0.
    sync_codes = codes[: n_f : m + 1]
    bits = np.where(sync_codes == DET_CODE["H"], 1, -1).astype(np.int8)
    s = SyncString(bits=bits, params=params, c0_nominal=nominal_c0(params.lam))
    layout = FrameLayout(m=m, string_len=params.length, frame_len=n_f)
    return FrameSchedule(
        layout=layout,
        sync=s,
        frames=frames,
        seed=int(header["seed"]),
        sync_mode=header.get("sync_mode", "all"),
        _materialized=codes.copy(),
    )
