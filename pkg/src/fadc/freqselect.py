"""Octave band decomposition by Fourier masks and spatial band reweighting."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import spectrum as S
from . import tensor as T
from .autodiff import call, register
from .conv import dilated_conv2d


@dataclass(frozen=True)
class BandSet:
    edges: tuple[float, ...] = S.OCTAVE_EDGES

    @property
    def count(self) -> int:
        return len(self.edges) - 1

    def masks(self, h: int, w: int) -> list[S.BandMask]:
        return S.octave_masks(h, w, self.edges)


OCTAVES = BandSet()


@lru_cache(maxsize=64)
def _half_masks(h: int, w: int, edges: tuple[float, ...]) -> tuple[np.ndarray, ...]:
    # masks in numpy's rfft2 layout; valid because every mask is symmetric
    # under (u, v) -> (-u, -v), so the filtered signal is exactly real
    return tuple(m.unshifted[:, : w // 2 + 1] for m in S.octave_masks(h, w, edges))


def _check_even(x: np.ndarray):
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"band decomposition needs even spatial dims, got {(h, w)}")


def _filter_all(x: np.ndarray, bands: BandSet) -> list[np.ndarray]:
    _check_even(x)
    h, w = x.shape[-2:]
    spec = np.fft.rfft2(x)
    return [np.fft.irfft2(spec * m, s=(h, w)) for m in _half_masks(h, w, bands.edges)]


def band_filter(x, bands: BandSet = OCTAVES, b: int = 0) -> np.ndarray:
    """Project ``x`` onto band ``b``."""
    x = np.asarray(x, dtype=np.float64)
    _check_even(x)
    h, w = x.shape[-2:]
    m = _half_masks(h, w, bands.edges)[b]
    return np.fft.irfft2(np.fft.rfft2(x) * m, s=(h, w))


# the projector is real-symmetric under a unitary transform, hence self-adjoint
band_filter_adjoint = band_filter


def band_decompose(x, bands: BandSet = OCTAVES) -> list[np.ndarray]:
    return _filter_all(np.asarray(x, dtype=np.float64), bands)


def _apply_fwd(x, a, bands):
    x, a = np.asarray(x, dtype=np.float64), np.asarray(a, dtype=np.float64)
    n, c, h, w = x.shape
    if a.shape != (n, bands.count, h, w):
        raise ValueError(f"selection maps must be {(n, bands.count, h, w)}, got {a.shape}")
    parts = _filter_all(x, bands)
    out = sum(a[:, b : b + 1] * parts[b] for b in range(bands.count))
    return out, {"a": a, "parts": parts, "bands": bands}


def _apply_bwd(ctx, g):
    a, parts, bands = ctx["a"], ctx["parts"], ctx["bands"]
    ga = np.concatenate([(g * p).sum(axis=1, keepdims=True) for p in parts], axis=1)
    h, w = g.shape[-2:]
    masks = _half_masks(h, w, bands.edges)
    # sum_b P_b(A_b * g) with one inverse transform
    spec = sum(np.fft.rfft2(a[:, b : b + 1] * g) * masks[b] for b in range(bands.count))
    gx = np.fft.irfft2(spec, s=(h, w))
    return gx, ga


register("apply_freqselect", _apply_fwd, _apply_bwd)


def apply_freqselect(x, a, bands: BandSet = OCTAVES):
    """x_hat(i, j) = sum_b A_b(i, j) X_b(i, j); one map per band shared by all channels."""
    return call("apply_freqselect", x, a, bands=bands)


def init_selection_predictor(c_in: int, bands: BandSet = OCTAVES) -> dict[str, np.ndarray]:
    return {"w": np.zeros((bands.count - 1, c_in, 3, 3)), "b": np.zeros(bands.count - 1)}


def predict_selection(x, psi_w, psi_b):
    """Band 0 is fixed at 1; bands 1.. are sigmoid of a 3x3 conv over ``x``."""
    gates = T.sigmoid(dilated_conv2d(x, psi_w, 1, psi_b))
    xv = getattr(x, "value", x)
    n, _, h, w = np.shape(xv)
    return T.concat_channels(np.ones((n, 1, h, w)), gates)
