"""Context augmentation: frequency-domain mixing plus overlapping random crops.

The two augmented views of an instance are (1) the original series cropped to
``[a1, b1)`` and (2) a spectrally mixed series cropped to ``[a2, b2)``, with
losses later computed on the shared overlap ``[a2, b1)``.  Mixing swaps a
random subset of Fourier bins (together with their conjugate mirrors, so the
result stays real) for the corresponding bins of a donor instance.

The transform is a direct O(T^2) DFT via a cached coefficient matrix, with a
radix-2 fast path for power-of-two lengths; archive series lengths are
arbitrary and small enough that padding tricks are not worth the spectral
distortion they introduce.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from ._validation import check_fraction, check_positive_int, require_finite
from .data import TimeSeriesInstance

__all__ = [
    "CropPair",
    "dft",
    "idft",
    "frequency_mix",
    "mix_values",
    "random_crop_pair",
    "sample_crop_pairs",
    "ftaug_pair",
]

SeedLike = Union[int, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# discrete Fourier transform


@lru_cache(maxsize=32)
def _dft_matrix(T: int) -> np.ndarray:
    ft = np.outer(np.arange(T), np.arange(T))
    return np.exp(-2j * np.pi * ft / T)


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 transform; ``len(x)`` must be a power of two."""
    n = len(x)
    out = x.astype(np.complex128)
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    bits = n.bit_length() - 1
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    out = out[rev]
    half = 1
    while half < n:
        tw = np.exp(-2j * np.pi * np.arange(half) / (2 * half))
        out = out.reshape(-1, 2 * half)
        even = out[:, :half]
        odd = out[:, half:] * tw
        out = np.concatenate([even + odd, even - odd], axis=1).reshape(-1)
        half *= 2
    return out


def dft(signal: np.ndarray) -> np.ndarray:
    """Forward transform of one channel: X[f] = sum_t x[t] exp(-2i*pi*f*t/T)."""
    x = np.asarray(signal)
    if x.ndim != 1 or len(x) < 1:
        raise ValueError(f"dft expects a 1-D signal of length >= 1, got shape {x.shape}")
    if np.iscomplexobj(x):
        require_finite(x.real, "signal")
        require_finite(x.imag, "signal")
    else:
        require_finite(x, "signal")
        x = x.astype(np.float64)
    T = len(x)
    if T >= 2 and T & (T - 1) == 0:
        return _fft_pow2(np.asarray(x, dtype=np.complex128))
    return _dft_matrix(T) @ x


def idft(spectrum: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`dft` (returns a complex array)."""
    X = np.asarray(spectrum, dtype=np.complex128)
    if X.ndim != 1 or len(X) < 1:
        raise ValueError(f"idft expects a 1-D spectrum, got shape {X.shape}")
    return np.conj(dft(np.conj(X))) / len(X)


# ---------------------------------------------------------------------------
# frequency mixing


def _select_bins(T: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Pick the non-negative-frequency bins to replace.

    The candidate pool is the floor(T/2)+1 bins {0..floor(T/2)} (DC through
    Nyquist); rate 0 selects none and rate 1 selects all of them, which after
    mirror replacement swaps the entire spectrum.
    """
    pool = T // 2 + 1
    n_sel = int(round(rate * pool))
    n_sel = min(max(n_sel, 0), pool)
    if n_sel == 0:
        return np.empty(0, dtype=np.intp)
    return np.sort(rng.choice(pool, size=n_sel, replace=False))


def _splice_spectrum(spec_x: np.ndarray, spec_d: np.ndarray, bins: np.ndarray) -> np.ndarray:
    """Replace ``bins`` and their conjugate mirrors of spec_x with donor bins."""
    T = len(spec_x)
    out = spec_x.copy()
    for s in bins:
        out[s] = spec_d[s]
        mirror = (T - s) % T
        if mirror != s:
            out[mirror] = spec_d[mirror]
    return out


def mix_values(x: np.ndarray, donor: np.ndarray, rate: float,
               seed: SeedLike) -> np.ndarray:
    """Frequency-mix raw (T, F) value arrays; bins are drawn per channel."""
    x = np.asarray(x, dtype=np.float64)
    donor = np.asarray(donor, dtype=np.float64)
    if x.shape != donor.shape:
        raise ValueError(f"shape mismatch: x has {x.shape}, donor has {donor.shape}")
    rate = check_fraction(rate, "rate")
    rng = _rng(seed)
    T, F = x.shape
    out = np.empty_like(x)
    for f in range(F):
        bins = _select_bins(T, rate, rng)
        if len(bins) == 0:
            out[:, f] = x[:, f]
            continue
        spliced = _splice_spectrum(dft(x[:, f]), dft(donor[:, f]), bins)
        mixed = idft(spliced)
        residue = np.abs(mixed.imag).max()
        if residue > 1e-9:
            raise RuntimeError(
                f"frequency mixing produced imaginary residue {residue:.3e} on channel {f}"
            )
        out[:, f] = mixed.real
    return out


def frequency_mix(x: TimeSeriesInstance, donor: TimeSeriesInstance, rate: float,
                  seed: SeedLike) -> TimeSeriesInstance:
    """Replace a random share of x's frequency components with the donor's.

    Missing cells are zero-filled for the transform and restored to missing in
    the output; the observation mask is carried over from ``x``.
    """
    if x.values.shape != donor.values.shape:
        raise ValueError(
            f"shape mismatch: x has {x.values.shape}, donor has {donor.values.shape}"
        )
    xv = np.where(x.observed, x.values, 0.0)
    dv = np.where(donor.observed, donor.values, 0.0)
    mixed = mix_values(xv, dv, rate, seed)
    mixed = np.where(x.observed, mixed, np.nan)
    return TimeSeriesInstance(values=mixed, observed=x.observed.copy(),
                              label=x.label, id=x.id)


# ---------------------------------------------------------------------------
# overlapping crop pairs


@dataclass(frozen=True)
class CropPair:
    """Two half-open windows [a1, b1) and [a2, b2) with non-empty overlap."""

    a1: int
    a2: int
    b1: int
    b2: int
    T: int

    def __post_init__(self):
        ok = 0 <= self.a1 <= self.a2 < self.b1 <= self.b2 <= self.T
        if not ok:
            raise ValueError(
                f"invalid crop pair (a1={self.a1}, a2={self.a2}, b1={self.b1}, "
                f"b2={self.b2}, T={self.T}); need 0 <= a1 <= a2 < b1 <= b2 <= T"
            )

    @property
    def overlap(self) -> tuple[int, int]:
        return (self.a2, self.b1)

    @property
    def overlap_length(self) -> int:
        return self.b1 - self.a2


@lru_cache(maxsize=16)
def _crop_tables(T: int):
    """Enumerate valid (a2, b1) pairs with weights (a2+1)*(T-b1+1).

    Weighting by the number of compatible (a1, b2) completions makes the
    4-tuple draw exactly uniform over all valid crop pairs.
    """
    a2s, b1s = [], []
    for a2 in range(T):
        for b1 in range(a2 + 1, T + 1):
            a2s.append(a2)
            b1s.append(b1)
    a2s = np.asarray(a2s, dtype=np.intp)
    b1s = np.asarray(b1s, dtype=np.intp)
    weights = (a2s + 1) * (T - b1s + 1)
    cum = np.cumsum(weights, dtype=np.float64)
    return a2s, b1s, cum


def sample_crop_pairs(T: int, n: int, seed: SeedLike) -> tuple[np.ndarray, ...]:
    """Vectorized draw of ``n`` uniform crop pairs; returns (a1, a2, b1, b2)."""
    T = check_positive_int(T, "T", minimum=2)
    rng = _rng(seed)
    a2s, b1s, cum = _crop_tables(T)
    total = cum[-1]
    pick = np.searchsorted(cum, rng.random(n) * total, side="right")
    a2 = a2s[pick]
    b1 = b1s[pick]
    a1 = rng.integers(0, a2 + 1)
    b2 = rng.integers(b1, T + 1)
    return a1, a2, b1, b2


def random_crop_pair(T: int, seed: SeedLike) -> CropPair:
    """Uniformly sample a valid crop pair with at least one overlap timestamp."""
    a1, a2, b1, b2 = sample_crop_pairs(T, 1, seed)
    return CropPair(a1=int(a1[0]), a2=int(a2[0]), b1=int(b1[0]), b2=int(b2[0]), T=T)


def ftaug_pair(x: TimeSeriesInstance, donor: TimeSeriesInstance, mix_rate: float,
               seed: SeedLike) -> tuple[np.ndarray, np.ndarray, CropPair]:
    """Build the two training views of an instance.

    View 1 is the original values over [a1, b1); view 2 is the frequency-mixed
    values over [a2, b2).  Mixing happens on the full series before cropping
    (cropping first would change the spectrum being mixed), and only the second
    view is mixed so one anchor stays faithful to the data.  Training-time only.
    """
    rng = _rng(seed)
    T = x.values.shape[0]
    crop = random_crop_pair(T, rng)
    mixed = frequency_mix(x, donor, mix_rate, rng)
    xv = np.where(x.observed, x.values, 0.0)
    mv = np.where(mixed.observed, mixed.values, 0.0)
    view1 = xv[crop.a1:crop.b1]
    view2 = mv[crop.a2:crop.b2]
    return view1, view2, crop
