"""Integer-dilation convolution and per-pixel fractional-dilation convolution.

Both are stride 1 with zero padding so the output keeps the input's spatial
size.  Kernels are (c_out, c_in, K, K), or (n, c_out, c_in, K, K) when every
sample carries its own kernel (AdaKern).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .autodiff import call, register


def grid_offsets(k: int) -> np.ndarray:
    """The K*K tap offsets (dy, dx), row-major from (-r, -r) to (r, r)."""
    if k < 1 or k % 2 == 0:
        raise ValueError("kernel size must be odd and >= 1")
    r = (k - 1) // 2
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return np.stack([dy.ravel(), dx.ravel()], axis=1)


def _kernel_info(x: np.ndarray, w: np.ndarray):
    per_sample = w.ndim == 5
    co, ci, k, k2 = w.shape[-4:]
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {w.shape}")
    if ci != x.shape[1]:
        raise ValueError(f"kernel expects {ci} input channels, input has {x.shape[1]}")
    if per_sample and w.shape[0] != x.shape[0]:
        raise ValueError("per-sample kernels must match the batch size")
    return per_sample, co, ci, k


def _matmul_fwd(w, cols, bias, per_sample):
    n = cols.shape[0]
    w2 = w.reshape(n if per_sample else 1, w.shape[-4], -1)
    out = w2 @ cols
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None]
    return out


def _matmul_bwd(g, w, cols, per_sample, has_bias):
    n = cols.shape[0]
    w2 = w.reshape(n if per_sample else 1, w.shape[-4], -1)
    gcols = np.swapaxes(w2, 1, 2) @ g
    gw = g @ np.swapaxes(cols, 1, 2)
    if not per_sample:
        gw = gw.sum(axis=0)
    gb = g.sum(axis=(0, 2)) if has_bias else None
    return gcols, gw.reshape(w.shape), gb


# ---------------------------------------------------------------- fixed dilation


def _dilated_fwd(x, w, bias, d):
    x, w = np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64)
    per_sample, co, ci, k = _kernel_info(x, w)
    n, _, h, wd = x.shape
    pad = (k - 1) // 2 * d
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    taps = [xp[:, :, ky * d : ky * d + h, kx * d : kx * d + wd] for ky in range(k) for kx in range(k)]
    cols = np.stack(taps, axis=2).reshape(n, ci * k * k, h * wd)
    out = _matmul_fwd(w, cols, bias, per_sample).reshape(n, co, h, wd)
    ctx = dict(w=w, cols=cols, per_sample=per_sample, has_bias=bias is not None,
               xshape=x.shape, k=k, d=d, pad=pad)
    return out, ctx


def _dilated_bwd(ctx, g):
    n, ci, h, wd = ctx["xshape"]
    k, d, pad = ctx["k"], ctx["d"], ctx["pad"]
    g2 = g.reshape(n, -1, h * wd)
    gcols, gw, gb = _matmul_bwd(g2, ctx["w"], ctx["cols"], ctx["per_sample"], ctx["has_bias"])
    gcols = gcols.reshape(n, ci, k * k, h, wd)
    gxp = np.zeros((n, ci, h + 2 * pad, wd + 2 * pad))
    for t in range(k * k):
        ky, kx = divmod(t, k)
        gxp[:, :, ky * d : ky * d + h, kx * d : kx * d + wd] += gcols[:, :, t]
    gx = gxp[:, :, pad : pad + h, pad : pad + wd]
    return gx, gw, gb


register("dilated_conv2d", _dilated_fwd, _dilated_bwd)


def dilated_conv2d(x, w, d: int = 1, bias=None):
    """Y(p) = sum_i W_i X(p + offset_i * d), summed over input channels."""
    if int(d) != d or d < 1:
        raise ValueError("dilation must be a positive integer")
    return call("dilated_conv2d", x, w, bias, d=int(d))


# ---------------------------------------------------------------- adaptive dilation


def _tap_kernel(w: np.ndarray, per_sample: bool, n: int) -> np.ndarray:
    # (.., co, ci, K, K) -> (n or 1, co, K*K*ci), tap-major to match the sample rows
    co, ci, k, _ = w.shape[-4:]
    w = w.reshape(-1, co, ci, k * k)
    return np.swapaxes(w, 2, 3).reshape(w.shape[0], co, k * k * ci)


def _adaptive_fwd(x, w, dmap, mod, bias):
    x, w = np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64)
    dmap = np.asarray(dmap, dtype=np.float64)
    per_sample, co, ci, k = _kernel_info(x, w)
    n, _, h, wd = x.shape
    hw, kk = h * wd, k * k
    if dmap.shape != (n, 1, h, wd):
        raise ValueError(f"dilation map must be {(n, 1, h, wd)}, got {dmap.shape}")
    if np.any(dmap < 0):
        raise ValueError("dilation map has negative entries")
    offs = grid_offsets(k).astype(np.float64)
    py, px = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(wd, dtype=np.float64), indexing="ij")
    dv = dmap.reshape(n, hw, 1)
    # sample points ordered (pixel, tap)
    ys = py.reshape(1, hw, 1) + offs[None, None, :, 0] * dv
    xs = px.reshape(1, hw, 1) + offs[None, None, :, 1] * dv
    it = T.interp_matrices(ys, xs, h, wd)
    rows = T.to_rows(x)
    samples = (it.value @ rows).reshape(n, hw, kk, ci)
    m = None
    if mod is not None:
        m = np.asarray(mod, dtype=np.float64)
        if m.shape != (n, kk, h, wd):
            raise ValueError(f"modulation must be {(n, kk, h, wd)}, got {m.shape}")
        m = np.swapaxes(m.reshape(n, kk, hw), 1, 2)[..., None]  # (n, hw, kk, 1)
    cols = (samples * m if m is not None else samples).reshape(n, hw, kk * ci)
    wt = _tap_kernel(w, per_sample, n)
    out = cols @ np.swapaxes(wt, 1, 2)  # (n, hw, co)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    out = np.swapaxes(out, 1, 2).reshape(n, co, h, wd)
    ctx = dict(w_shape=w.shape, wt=wt, cols=cols, samples=samples, m=m, it=it, rows=rows,
               offs=offs, per_sample=per_sample, has_bias=bias is not None, xshape=x.shape, k=k)
    return out, ctx


def _adaptive_bwd(ctx, g):
    n, ci, h, wd = ctx["xshape"]
    k, offs, m, it = ctx["k"], ctx["offs"], ctx["m"], ctx["it"]
    kk, hw = k * k, h * wd
    gt = np.swapaxes(g.reshape(n, -1, hw), 1, 2)  # (n, hw, co)
    gcols = (gt @ ctx["wt"]).reshape(n, hw, kk, ci)
    gwt = np.swapaxes(gt, 1, 2) @ ctx["cols"]  # (n, co, kk*ci)
    if not ctx["per_sample"]:
        gwt = gwt.sum(axis=0, keepdims=True)
    co = gwt.shape[1]
    gw = np.swapaxes(gwt.reshape(-1, co, kk, ci), 2, 3).reshape(ctx["w_shape"])
    gb = gt.sum(axis=(0, 1)) if ctx["has_bias"] else None
    if m is not None:
        gm = (gcols * ctx["samples"]).sum(axis=3)  # (n, hw, kk)
        gmod = np.swapaxes(gm, 1, 2).reshape(n, kk, h, wd)
        gs = gcols * m
    else:
        gmod, gs = None, gcols
    gs_rows = gs.reshape(-1, ci)
    gx = T.from_rows(it.value.T @ gs_rows, ctx["xshape"])
    rows = ctx["rows"]
    sy = ((it.dy @ rows) * gs_rows).sum(axis=1).reshape(n, hw, kk)
    sx = ((it.dx @ rows) * gs_rows).sum(axis=1).reshape(n, hw, kk)
    gd = (sy @ offs[:, 0] + sx @ offs[:, 1]).reshape(n, 1, h, wd)
    return gx, gw, gd, gmod, gb


register("adaptive_dilated_conv2d", _adaptive_fwd, _adaptive_bwd)


def adaptive_dilated_conv2d(x, w, dmap, mod=None, bias=None):
    """Y(p) = sum_i m_i(p) W_i X(p + offset_i * D(p)) with bilinear sampling.

    ``dmap`` is (n, 1, h, w) and shared by every tap and channel; ``mod``
    is (n, K*K, h, w) or None for unit modulation.
    """
    return call("adaptive_dilated_conv2d", x, w, dmap, mod, bias)


# ---------------------------------------------------------------- predictor


def init_predictor(c_in: int, k: int = 3) -> dict[str, np.ndarray]:
    """Zero weights: the layer starts as a plain dilated conv at ``d_init``."""
    return {"w": np.zeros((1 + k * k, c_in, 3, 3)), "b": np.zeros(1 + k * k)}


def predict_dilation(x, theta_w, theta_b, d_init: float, k: int = 3, d_max: float | None = 8.0):
    """Returns (dilation map, modulation maps) from one 3x3 conv over ``x``.

    dilation = min(relu(logit + d_init), d_max); modulation = sigmoid(logits).
    """
    logits = dilated_conv2d(x, theta_w, 1, theta_b)
    if np.shape(getattr(logits, "value", logits))[1] != 1 + k * k:
        raise ValueError("predictor must produce 1 + K*K channels")
    dmap = T.relu(call("add", T.slice_channels(logits, 0, 1), float(d_init)))
    if d_max is not None:
        dmap = T.clamp_max(dmap, d_max)
    mod = T.sigmoid(T.slice_channels(logits, 1, 1 + k * k))
    return dmap, mod
