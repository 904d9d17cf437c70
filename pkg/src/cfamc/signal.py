"""Baseband frame synthesis, flat-fading channel and equal-gain combining.

One sample is one constellation symbol; the RU's OFDM chain is treated as
transparent. Fading gains are real and positive, i.e. the RUs are assumed
phase-aligned before combining.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "ModulationScheme",
    "FrameMeta",
    "IQFrame",
    "SNRPlan",
    "constellation",
    "constellation_core_mask",
    "modulate",
    "make_snr_plan",
    "apply_channel",
    "egc_combine",
    "measure_snr",
    "db_to_linear",
    "linear_to_db",
]

# log-normal spread of per-RU shares in diverse mode
DIVERSE_SIGMA = 0.5


class ModulationScheme(enum.IntEnum):
    BPSK = 0
    QPSK = 1
    QAM16 = 2
    QAM32 = 3
    QAM64 = 4
    QAM128 = 5
    QAM256 = 6

    @property
    def bits_per_symbol(self) -> int:
        return _BITS[self]

    @property
    def order(self) -> int:
        return 1 << self.bits_per_symbol

    @classmethod
    def parse(cls, value) -> "ModulationScheme":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise InvalidArgument(f"unknown modulation scheme {value!r}") from None


_BITS = {
    ModulationScheme.BPSK: 1,
    ModulationScheme.QPSK: 2,
    ModulationScheme.QAM16: 4,
    ModulationScheme.QAM32: 5,
    ModulationScheme.QAM64: 6,
    ModulationScheme.QAM128: 7,
    ModulationScheme.QAM256: 8,
}


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


@dataclass(frozen=True)
class FrameMeta:
    scheme: ModulationScheme
    egc_snr_db: float = math.nan
    ru_index: Optional[int] = None
    seed: int = 0


@dataclass(frozen=True, eq=False)
class IQFrame:
    samples: np.ndarray
    meta: FrameMeta

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1 or s.size == 0:
            raise InvalidArgument("an IQ frame needs a non-empty 1-D sample vector")
        object.__setattr__(self, "samples", s)

    @property
    def length(self) -> int:
        return self.samples.size

    def __len__(self):
        return self.samples.size

    def energy(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class SNRPlan:
    """Per-RU gains and noise variances realizing a target combined SNR."""

    target_egc_snr_db: float
    n_ru: int
    mode: str
    per_ru_snr_linear: tuple
    amplitudes: tuple
    noise_vars: tuple

    @property
    def egc_snr_linear(self) -> float:
        a = np.asarray(self.amplitudes)
        return float(a.sum() ** 2 / np.sum(self.noise_vars))

    @property
    def mean_ru_snr_linear(self) -> float:
        return float(np.mean(self.per_ru_snr_linear))


# ---------------------------------------------------------------------------
# constellations


def _gray(n):
    return n ^ (n >> 1)


def _gray_levels(bits: int) -> np.ndarray:
    """Amplitude level (odd integers, ascending position) for each Gray label."""
    m = 1 << bits
    levels = np.empty(m)
    for pos in range(m):
        levels[_gray(pos)] = 2 * pos - (m - 1)
    return levels


def _rect_grid(bits_i: int, bits_q: int):
    lv_i = _gray_levels(bits_i)
    lv_q = _gray_levels(bits_q)
    labels = np.arange(1 << (bits_i + bits_q))
    return lv_i[labels >> bits_q] + 1j * lv_q[labels & ((1 << bits_q) - 1)]


@lru_cache(maxsize=None)
def _constellation_raw(scheme: ModulationScheme):
    k = scheme.bits_per_symbol
    if scheme is ModulationScheme.BPSK:
        pts = np.array([-1.0 + 0j, 1.0 + 0j])
        core = np.ones(2, dtype=bool)
    elif k % 2 == 0:
        pts = _rect_grid(k // 2, k // 2)
        core = np.ones(pts.size, dtype=bool)
    else:
        # cross QAM: fold the outer columns of a 2^a x 2^b Gray rectangle
        # onto the empty top/bottom rows of the cross
        a, b = (k + 1) // 2, (k - 1) // 2
        pts = _rect_grid(a, b)
        x_rect_max = (1 << a) - 1
        x_cross_max = 3 * (1 << (b - 1)) - 1
        shift = x_rect_max - x_cross_max
        x, y = pts.real.copy(), pts.imag.copy()
        outer = np.abs(x) > x_cross_max
        nx = np.sign(x[outer]) * np.abs(y[outer])
        ny = np.sign(y[outer]) * (np.abs(x[outer]) - shift)
        x[outer], y[outer] = nx, ny
        pts = x + 1j * y
        core = ~outer
    scale = np.sqrt(np.mean(np.abs(pts) ** 2))
    pts = pts / scale
    pts.setflags(write=False)
    core.setflags(write=False)
    return pts, core


def constellation(scheme) -> np.ndarray:
    """Unit-energy constellation; entry ``i`` carries bit label ``i``."""
    return _constellation_raw(ModulationScheme.parse(scheme))[0].copy()


def constellation_core_mask(scheme) -> np.ndarray:
    """Points that keep their rectangular Gray neighbours (all, for square grids)."""
    return _constellation_raw(ModulationScheme.parse(scheme))[1].copy()


# ---------------------------------------------------------------------------
# frames and channel


def _rng(seed) -> np.random.Generator:
    # any Python int is accepted; negative seeds wrap to their 64-bit pattern
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def modulate(scheme, n_symbols: int, seed: int) -> IQFrame:
    scheme = ModulationScheme.parse(scheme)
    if int(n_symbols) <= 0:
        raise InvalidArgument(f"n_symbols must be positive, got {n_symbols}")
    rng = _rng(seed)
    pts = _constellation_raw(scheme)[0]
    idx = rng.integers(0, pts.size, size=int(n_symbols))
    return IQFrame(pts[idx], FrameMeta(scheme=scheme, seed=int(seed)))


def make_snr_plan(target_egc_snr_db: float, n_ru: int, mode: str = "diverse",
                  seed: int = 0, shares=None) -> SNRPlan:
    """Split a combined SNR over ``n_ru`` branches.

    With per-branch shares ``s_i`` summing to the linear target, setting both
    the gain and the noise variance of branch ``i`` to ``s_i`` gives a
    combined SNR ``(sum s)^2 / sum s = sum s`` and a per-branch SNR ``s_i``.
    ``shares`` overrides the random draw in diverse mode (only the ratios
    matter).
    """
    if int(n_ru) < 1:
        raise InvalidArgument(f"n_ru must be >= 1, got {n_ru}")
    if not math.isfinite(target_egc_snr_db):
        raise InvalidArgument("target SNR must be finite")
    if mode not in ("equal", "diverse"):
        raise InvalidArgument(f"unknown plan mode {mode!r}")
    n_ru = int(n_ru)
    total = 10.0 ** (target_egc_snr_db / 10.0)
    if mode == "equal":
        s = np.full(n_ru, total / n_ru)
    else:
        if shares is None:
            rng = _rng(seed)
            w = np.exp(rng.normal(0.0, DIVERSE_SIGMA, size=n_ru))
        else:
            w = np.asarray(shares, dtype=float)
            if w.shape != (n_ru,) or np.any(w <= 0):
                raise InvalidArgument("shares must be n_ru positive numbers")
        s = total * w / w.sum()
    s = tuple(float(v) for v in s)
    return SNRPlan(
        target_egc_snr_db=float(target_egc_snr_db),
        n_ru=n_ru,
        mode=mode,
        per_ru_snr_linear=s,
        amplitudes=s,
        noise_vars=s,
    )


def apply_channel(frame: IQFrame, amplitude: float, noise_var: float, seed: int) -> IQFrame:
    """Scale by a real gain and add circular complex white Gaussian noise."""
    if noise_var < 0:
        raise InvalidArgument(f"noise_var must be non-negative, got {noise_var}")
    rng = _rng(seed)
    n = frame.length
    out = amplitude * frame.samples
    if noise_var > 0:
        std = math.sqrt(noise_var / 2.0)
        noise = rng.standard_normal((2, n))
        out = out + std * (noise[0] + 1j * noise[1])
    else:
        out = out.astype(complex, copy=True)
    return IQFrame(out, replace(frame.meta, seed=int(seed)))


def egc_combine(frames: Sequence[IQFrame]) -> IQFrame:
    """Unit-weight sum of co-phased branch frames."""
    frames = list(frames)
    if not frames:
        raise InvalidArgument("egc_combine needs at least one frame")
    n = frames[0].length
    if any(f.length != n for f in frames):
        raise InvalidArgument("all frames must have equal length")
    total = np.sum([f.samples for f in frames], axis=0)
    meta = replace(frames[0].meta, ru_index=None)
    return IQFrame(total, meta)


def measure_snr(clean: IQFrame, noisy_scaled: IQFrame, amplitude: float) -> float:
    """Empirical SNR in dB of ``noisy_scaled`` against ``amplitude * clean``.

    Returns ``math.inf`` when the residual is exactly zero.
    """
    c = np.asarray(getattr(clean, "samples", clean))
    y = np.asarray(getattr(noisy_scaled, "samples", noisy_scaled))
    if c.shape != y.shape:
        raise InvalidArgument("frames must have equal length")
    sig = float(np.mean(np.abs(c) ** 2))
    if sig == 0.0:
        raise InvalidArgument("clean frame has zero energy")
    resid = float(np.mean(np.abs(y - amplitude * c) ** 2))
    if resid == 0.0:
        return math.inf
    if amplitude == 0:
        return -math.inf
    return 10.0 * math.log10(amplitude ** 2 * sig / resid)
