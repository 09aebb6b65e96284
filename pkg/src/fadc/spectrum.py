"""2-D discrete Fourier analysis: spectra, band masks, band power and local
high-frequency power maps.

Spectra use the forward normalisation 1/(h*w) and are stored with the zero
frequency in the middle (index ``h // 2``), so integer frequency ``u`` sits
at row ``u + h // 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

OCTAVE_EDGES = (0.0, 1 / 16, 1 / 8, 1 / 4, 1 / 2)


def is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


# ---------------------------------------------------------------- transforms


@lru_cache(maxsize=64)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalised iterative Cooley-Tukey transform along the last axis."""
    a = np.asarray(a)
    n = a.shape[-1]
    if not is_pow2(n):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = a.shape[:-1]
    # transform axis first so each butterfly is a long contiguous vector op
    work = np.ascontiguousarray(np.moveaxis(a, -1, 0)[_bitrev(n)], dtype=np.complex128)
    work = work.reshape(n, -1)
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        blocks = work.reshape(n // size, size, -1)
        t = blocks[:, half:] * _twiddles(size, sign)[None, :, None]
        blocks[:, half:] = blocks[:, :half] - t
        blocks[:, :half] += t
        size *= 2
    return np.moveaxis(work.reshape(n, *lead), 0, -1)


@lru_cache(maxsize=64)
def _twiddles(size: int, sign: float) -> np.ndarray:
    return np.exp(sign * 2j * np.pi * np.arange(size // 2) / size)


def dft_matrix(n: int, inverse: bool = False) -> np.ndarray:
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def _along_last(a: np.ndarray, inverse: bool, method: str) -> np.ndarray:
    n = a.shape[-1]
    if method == "auto":
        method = "fft" if is_pow2(n) and n > 32 else "direct"
    if method == "fft":
        return fft_radix2(a, inverse)
    # one flat 2-D product is much faster than many tiny batched ones
    a = np.asarray(a)
    flat = a.reshape(-1, n) @ dft_matrix(n, inverse).T
    return flat.reshape(a.shape)


def fft2_raw(x: np.ndarray, inverse: bool = False, method: str = "auto") -> np.ndarray:
    """Unnormalised, unshifted 2-D transform over the last two axes."""
    out = _along_last(x, inverse, method)
    out = _along_last(np.swapaxes(out, -1, -2), inverse, method)
    return np.swapaxes(out, -1, -2)


def freq_index(n: int) -> np.ndarray:
    """Signed integer frequency of each unshifted DFT index."""
    k = np.arange(n)
    return (k + n // 2) % n - n // 2


@dataclass(frozen=True)
class Spectrum2:
    bins: np.ndarray  # complex (h, w), zero frequency at (h // 2, w // 2)

    @property
    def h(self) -> int:
        return self.bins.shape[0]

    @property
    def w(self) -> int:
        return self.bins.shape[1]

    def at(self, u: int, v: int) -> complex:
        return complex(self.bins[(u + self.h // 2) % self.h, (v + self.w // 2) % self.w])

    def power(self) -> np.ndarray:
        return np.abs(self.bins) ** 2


def _shift(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[-2:]
    return np.roll(a, (h // 2, w // 2), axis=(-2, -1))


def _unshift(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[-2:]
    return np.roll(a, (-(h // 2), -(w // 2)), axis=(-2, -1))


def dft2(x, method: str = "auto") -> Spectrum2:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("dft2 expects a rank-2 array")
    h, w = x.shape
    return Spectrum2(_shift(fft2_raw(x, method=method)) / (h * w))


def idft2(spec: Spectrum2, method: str = "auto") -> np.ndarray:
    return fft2_raw(_unshift(spec.bins), inverse=True, method=method)


# ---------------------------------------------------------------- bands


@dataclass(frozen=True)
class BandMask:
    lo: float
    hi: float
    mask: np.ndarray  # {0, 1} floats, shifted layout

    @property
    def unshifted(self) -> np.ndarray:
        return _unshift(self.mask)


def band_mask(h: int, w: int, lo: float, hi: float) -> BandMask:
    if not (0.0 <= lo < hi <= 0.5):
        raise ValueError(f"band edges must satisfy 0 <= lo < hi <= 1/2, got [{lo}, {hi}]")
    fu = np.abs(np.arange(h) - h // 2) / h
    fv = np.abs(np.arange(w) - w // 2) / w
    m = np.maximum(fu[:, None], fv[None, :])
    inside = (m >= lo) & ((m <= hi) if hi == 0.5 else (m < hi))
    return BandMask(lo, hi, inside.astype(np.float64))


def octave_masks(h: int, w: int, edges=OCTAVE_EDGES) -> list[BandMask]:
    return [band_mask(h, w, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]


def band_power(x, mask: BandMask) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != mask.mask.shape:
        raise ValueError(f"image {x.shape} and mask {mask.mask.shape} differ")
    return float((dft2(x).power() * mask.mask).sum())


# ---------------------------------------------------------------- HP maps


@dataclass(frozen=True)
class HpConfig:
    s: int = 16
    d_ref: float = 2.0
    stride: int | None = None  # None -> s // 2; 1 gives a dense map

    def __post_init__(self):
        if self.s < 3:
            raise ValueError("window must be at least 3 pixels")
        if self.d_ref <= 0:
            raise ValueError("reference dilation must be positive")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def step(self) -> int:
        return self.stride if self.stride is not None else max(1, self.s // 2)


def nyquist_set(s: int, d: float) -> np.ndarray:
    """Boolean (s, s) mask, unshifted layout, of frequencies above 1/(2d)."""
    f = np.abs(freq_index(s)) / s
    return np.maximum(f[:, None], f[None, :]) > 1.0 / (2.0 * d)


def window_centers(n: int, step: int) -> np.ndarray:
    return np.minimum(np.arange(math.ceil(n / step)) * step + step // 2, n - 1)


def _high_power(patches: np.ndarray, s: int, d: float) -> np.ndarray:
    """Normalised power of each s x s patch above 1/(2d), by Parseval.

    Only the low box |u|, |v| <= s/(2d) is transformed (direct DFT rows);
    the high power is the total minus the box.
    """
    high = nyquist_set(s, d)
    if not high.any():
        return np.zeros(patches.shape[:-2])
    keep = np.flatnonzero(~high[0])  # frequencies inside the box along one axis
    f = dft_matrix(s)[keep]
    low = f @ patches @ f.T / (s * s)
    total = (patches ** 2).sum(axis=(-2, -1)) / (s * s)
    return np.maximum(total - (np.abs(low) ** 2).sum(axis=(-2, -1)), 0.0)


def hp_power_map(x, cfg: HpConfig = HpConfig()) -> np.ndarray:
    """High-frequency power around every pixel, shape (n, 1, h, w).

    Windows of ``cfg.s`` pixels are centred on a grid with spacing
    ``cfg.step``; each pixel takes the value of the window of its block.
    """
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    s, step = cfg.s, cfg.step
    cy, cx = window_centers(h, step), window_centers(w, step)
    xp = np.pad(x, ((0, 0), (0, 0), (s, s), (s, s)))
    k = np.arange(s) - s // 2 + s
    rows = cy[:, None] + k[None, :]
    cols = cx[:, None] + k[None, :]
    patches = xp[:, :, rows[:, None, :, None], cols[None, :, None, :]]  # n,c,ny,nx,s,s
    power = _high_power(patches, s, cfg.d_ref).mean(axis=1)
    iy, ix = np.arange(h) // step, np.arange(w) // step
    return power[:, iy[:, None], ix[None, :]][:, None]


def hp_partition(hp, q: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of the ceil(q*h*w) highest and lowest HP pixels per image.

    Ties go to the lower row-major index.  The low set is drawn from pixels
    outside the high set first, so the two are disjoint whenever possible.
    """
    if not 0 < q <= 0.5:
        raise ValueError("quantile must lie in (0, 0.5]")
    hp = np.asarray(hp, dtype=np.float64)
    n, _, h, w = hp.shape
    npx = h * w
    k = math.ceil(q * npx)
    plus = np.zeros((n, npx), dtype=bool)
    minus = np.zeros((n, npx), dtype=bool)
    idx = np.arange(npx)
    for i in range(n):
        v = hp[i].reshape(-1)
        top = np.lexsort((idx, -v))[:k]
        plus[i, top] = True
        bottom = np.lexsort((idx, plus[i], v))[:k]
        minus[i, bottom] = True
    return plus.reshape(n, 1, h, w), minus.reshape(n, 1, h, w)
