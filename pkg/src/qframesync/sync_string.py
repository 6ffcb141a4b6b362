"""Public synchronization string with periodic autocorrelation peaks.

The string is a +1/-1 sequence of length ``sub_len * n_peaks`` built so that
its centered circular autocorrelation is ~1 at lag 0, ~c0 at every multiple
of ``sub_len``, and ~0 elsewhere. Bit ``u + j*sub_len`` is
``2*step(y[u,j] - lam*x[u]) - 1`` with ``x`` drawn once per column ``u`` and
``y`` once per position: sharing ``x`` across a column is what correlates
positions that are ``sub_len`` apart.

Design value of the peak height: ``nominal_c0``. At ``lam == 1`` (the
default everywhere in this package) the measured normalized peak equals the
design value 1/3 exactly in expectation. For ``lam < 1`` the design value
``lam**2/3`` corresponds to the centered *unnormalized* covariance (the
normalized peak is ``lam/(3*(2-lam))``); for ``lam > 1`` the published
closed form ``1 - 2*lam/3`` is kept as the nominal tuning value but does not
match the measured peak, so stick to ``lam <= 1`` when peak height matters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._rng import substream
from .errors import ParameterError

_FORMAT = "qframesync-sync-string/1"


@dataclass(frozen=True)
class SyncStringParams:
    """Structure parameters: sub-period length, number of periodic peaks,
    threshold parameter and RNG seed."""

    sub_len: int
    n_peaks: int
    lam: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sub_len < 1 or self.n_peaks < 1:
            raise ParameterError("sub_len and n_peaks must be positive integers")
        if not (0.0 < self.lam <= 1.5):
            raise ParameterError(f"lam must be in (0, 1.5], got {self.lam}")

    @property
    def length(self) -> int:
        return self.sub_len * self.n_peaks


@dataclass(frozen=True)
class SyncString:
    bits: np.ndarray  # int8, values in {+1, -1}
    params: SyncStringParams
    c0_nominal: float

    def __len__(self) -> int:
        return self.bits.size


def nominal_c0(lam: float) -> float:
    """Design autocorrelation peak height for threshold ``lam``."""
    if lam <= 0:
        raise ParameterError(f"lam must be positive, got {lam}")
    if lam <= 1.0:
        return lam * lam / 3.0
    return 1.0 - 2.0 * lam / 3.0


def generate_sync_string(params: SyncStringParams) -> SyncString:
    """Deterministically generate the string for ``params``.

    Stream split: column draws x[u] come from substream (seed, 0), position
    draws y[u + j*sub_len] from substream (seed, 1) in position order, so
    the result does not depend on evaluation order.
    """
    x = substream(params.seed, 0).random(params.sub_len)
    y = substream(params.seed, 1).random(params.length)
    # Position p = u + j*sub_len uses x[p mod sub_len]; step(0) treated as 0.
    x_per_pos = np.tile(x, params.n_peaks)
    bits = np.where(y > params.lam * x_per_pos, 1, -1).astype(np.int8)
    return SyncString(bits=bits, params=params, c0_nominal=nominal_c0(params.lam))


def _centered(bits: np.ndarray) -> tuple[np.ndarray, float]:
    d = bits.astype(np.float64) - bits.mean()
    denom = float(d @ d)
    if denom == 0.0:
        raise ParameterError("degenerate string (all bits equal); autocorrelation undefined")
    return d, denom


def autocorrelation(s: SyncString, lag: int) -> float:
    """Circular, mean-centered, variance-normalized autocorrelation at ``lag``.

    Exactly 1.0 at lag 0 by construction.
    """
    n = len(s)
    if not 0 <= lag < n:
        raise ParameterError(f"lag must be in [0, {n}), got {lag}")
    d, denom = _centered(s.bits)
    return float(d @ np.roll(d, -lag)) / denom


def autocorrelation_curve(s: SyncString) -> np.ndarray:
    """All lags at once via FFT; matches ``autocorrelation`` to ~1e-12."""
    d, denom = _centered(s.bits)
    spec = np.fft.rfft(d)
    curve = np.fft.irfft(spec * np.conj(spec), n=d.size)
    return curve / denom


def peak_lags(params: SyncStringParams) -> np.ndarray:
    """Lags j*sub_len for j = 1 .. n_peaks-1 (the designed peak positions)."""
    return np.arange(1, params.n_peaks) * params.sub_len


def save_sync_string(s: SyncString, path) -> None:
    """One JSON header line, then the raw int8 bits. Byte-exact round trip."""
    header = {
        "format": _FORMAT,
        "L1": s.params.sub_len,
        "N1": s.params.n_peaks,
        "lambda": s.params.lam,
        "seed": s.params.seed,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("ascii"))
        f.write(b"\n")
        f.write(s.bits.tobytes())


def load_sync_string(path) -> SyncString:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("ascii"))
        if header.get("format") != _FORMAT:
            raise ParameterError(f"not a sync-string file: {path}")
        params = SyncStringParams(
            sub_len=int(header["L1"]),
            n_peaks=int(header["N1"]),
            lam=float(header["lambda"]),
            seed=int(header["seed"]),
        )
        bits = np.frombuffer(f.read(), dtype=np.int8)
    if bits.size != params.length:
        raise ParameterError(
            f"sync-string payload has {bits.size} bits, header implies {params.length}"
        )
    if not np.all(np.abs(bits) == 1):
        raise ParameterError("sync-string payload contains values other than +1/-1")
    return SyncString(bits=bits.copy(), params=params, c0_nominal=nominal_c0(params.lam))
