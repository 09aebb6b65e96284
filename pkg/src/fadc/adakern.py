"""Kernel split into a per-slice mean (DC only) and a zero-mean residual
(everything else), re-mixed per sample and output channel."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .autodiff import call, register


class KernelDecomposition(NamedTuple):
    w_bar: np.ndarray
    w_hat: np.ndarray


def decompose_kernel(w) -> KernelDecomposition:
    w = np.asarray(w, dtype=np.float64)
    w_bar = np.broadcast_to(w.mean(axis=(-2, -1), keepdims=True), w.shape).copy()
    return KernelDecomposition(w_bar, w - w_bar)


def _apply_fwd(w, lam):
    w, lam = np.asarray(w, dtype=np.float64), np.asarray(lam, dtype=np.float64)
    n, two, co, _ = lam.shape
    if two != 2 or co != w.shape[0]:
        raise ValueError(f"lambda shape {lam.shape} does not fit kernel {w.shape}")
    w_bar, w_hat = decompose_kernel(w)
    ll = lam[:, 0, :, 0][:, :, None, None, None]
    lh = lam[:, 1, :, 0][:, :, None, None, None]
    out = ll * w_bar[None] + lh * w_hat[None]
    return out, {"w_bar": w_bar, "w_hat": w_hat, "ll": ll, "lh": lh}


def _apply_bwd(ctx, g):
    ll, lh = ctx["ll"], ctx["lh"]
    glam_l = (g * ctx["w_bar"][None]).sum(axis=(2, 3, 4))
    glam_h = (g * ctx["w_hat"][None]).sum(axis=(2, 3, 4))
    glam = np.stack([glam_l, glam_h], axis=1)[..., None]
    # the mean projection is self-adjoint: dW = lh*g + mean(ll*g - lh*g)
    diff = ll * g - lh * g
    gw = (lh * g + diff.mean(axis=(-2, -1), keepdims=True)).sum(axis=0)
    return gw, glam


register("apply_adakern", _apply_fwd, _apply_bwd)


def apply_adakern(w, lam):
    """Per-sample kernels W' = lam_l * mean(W) + lam_h * (W - mean(W)).

    ``w`` is (c_out, c_in, K, K), ``lam`` is (n, 2, c_out, 1); the result is
    (n, c_out, c_in, K, K).
    """
    return call("apply_adakern", w, lam)


def init_lambda_predictor(c_in: int, c_out: int) -> dict[str, np.ndarray]:
    return {"w": np.zeros((2 * c_out, c_in)), "b": np.zeros(2 * c_out)}


def _linear_fwd(x, w, b):
    x, w = np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64)
    out = x @ w.T
    if b is not None:
        out = out + b
    return out, {"x": x, "w": w, "has_bias": b is not None}


def _linear_bwd(ctx, g):
    return g @ ctx["w"], g.T @ ctx["x"], g.sum(axis=0) if ctx["has_bias"] else None


register("linear", _linear_fwd, _linear_bwd)


def linear(x, w, b=None):
    """(n, c_in) @ w.T + b for w of shape (c_out, c_in)."""
    return call("linear", x, w, b)


def _reshape_fwd(a, shape):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(shape), {"shape": a.shape}


def _reshape_bwd(ctx, g):
    return (g.reshape(ctx["shape"]),)


register("reshape", _reshape_fwd, _reshape_bwd)


def predict_lambda(x, phi_w, phi_b):
    """Global average pool, one linear map, then 2*sigmoid -> (n, 2, c_out, 1)."""
    xv = getattr(x, "value", x)
    n, c = np.shape(xv)[:2]
    pooled = call("reshape", T.spatial_mean(x), shape=(n, c))
    logits = linear(pooled, phi_w, phi_b)
    co = np.shape(getattr(phi_w, "value", phi_w))[0] // 2
    lam = T.scale(T.sigmoid(logits), 2.0)
    return call("reshape", lam, shape=(n, 2, co, 1))
