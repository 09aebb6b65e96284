"""Dense (n, c, h, w) float64 tensors, elementwise ops and the bilinear sampler.

A tensor here is a plain rank-4 ``numpy.ndarray``; the constructors return
read-only arrays so callers cannot mutate shared values by accident.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .autodiff import call, register


class ShapeError(ValueError):
    pass


class SampleCoord(NamedTuple):
    y: float
    x: float


def _check_shape(shape: Sequence[int]) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or any(s < 1 for s in shape):
        raise ShapeError(f"expected 4 dims >= 1, got {shape}")
    return shape


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def zeros(shape) -> np.ndarray:
    return _frozen(np.zeros(_check_shape(shape)))


def full(shape, value: float) -> np.ndarray:
    return _frozen(np.full(_check_shape(shape), float(value)))


def from_data(shape, values) -> np.ndarray:
    shape = _check_shape(shape)
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size != np.prod(shape):
        raise ShapeError(f"{arr.size} values do not fill shape {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite")
    return _frozen(arr.reshape(shape).copy())


def as_tensor(x) -> np.ndarray:
    """Validate an existing array as a rank-4 tensor (no copy when possible)."""
    x = np.asarray(x, dtype=np.float64)
    _check_shape(x.shape)
    return x


# ---------------------------------------------------------------- bilinear


class Interp(NamedTuple):
    """Sparse bilinear interpolation of sample points from pixel rows.

    Each matrix is (n*P, n*h*w) with four entries per row; ``value`` holds
    the interpolation weights and ``dy`` / ``dx`` their derivatives w.r.t.
    the sample coordinates (one-sided at integer coordinates).  Neighbours
    outside the image carry weight zero.
    """
    value: sparse.csr_matrix
    dy: sparse.csr_matrix | None
    dx: sparse.csr_matrix | None


def interp_matrices(ys: np.ndarray, xs: np.ndarray, h: int, w: int, slopes: bool = True) -> Interp:
    n = ys.shape[0]
    ys, xs = ys.reshape(n, -1), xs.reshape(n, -1)
    npts = ys.shape[1]
    y0f, x0f = np.floor(ys), np.floor(xs)
    wy, wx = ys - y0f, xs - x0f
    y0, x0 = y0f.astype(np.int64), x0f.astype(np.int64)
    # per-axis validity of the low / high neighbour; a corner is valid iff both are
    vy = ((y0 >= 0) & (y0 < h), (y0 >= -1) & (y0 < h - 1))
    vx = ((x0 >= 0) & (x0 < w), (x0 >= -1) & (x0 < w - 1))
    fy, fx = (np.where(vy[0], 1.0 - wy, 0.0), np.where(vy[1], wy, 0.0)), (np.where(vx[0], 1.0 - wx, 0.0), np.where(vx[1], wx, 0.0))
    top = (np.arange(n, dtype=np.int64) * h * w)[:, None] + y0 * w + x0
    # corner axis last, order (0,0), (0,1), (1,0), (1,1)
    corners = ((0, 0), (0, 1), (1, 0), (1, 1))
    idx = np.empty((n, npts, 4), dtype=np.int64)
    for j, (oy, ox) in enumerate(corners):
        idx[..., j] = top + (oy * w + ox)
    np.clip(idx, 0, n * h * w - 1, out=idx)  # out-of-image corners carry weight 0
    indices = idx.reshape(-1)
    indptr = np.arange(0, 4 * n * npts + 1, 4)
    shape = (n * npts, n * h * w)

    def mat(gy, gx):
        vals = np.empty((n, npts, 4))
        for j, (oy, ox) in enumerate(corners):
            np.multiply(gy[oy], gx[ox], out=vals[..., j])
        m = sparse.csr_matrix(shape)
        m.data, m.indices, m.indptr = vals.reshape(-1), indices, indptr
        return m

    value = mat(fy, fx)
    if not slopes:
        return Interp(value, None, None)
    sy = (-vy[0].astype(np.float64), vy[1].astype(np.float64))
    sx = (-vx[0].astype(np.float64), vx[1].astype(np.float64))
    return Interp(value, mat(sy, fx), mat(fy, sx))


def to_rows(x: np.ndarray) -> np.ndarray:
    """(n, c, h, w) -> (n*h*w, c) pixel rows."""
    n, c, h, w = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(n * h * w, c)


def from_rows(r: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, c, h, w = shape
    return r.reshape(n, h, w, c).transpose(0, 3, 1, 2)


def _bilinear_fwd(x, ys, xs):
    x = np.asarray(x, dtype=np.float64)
    ys, xs = np.asarray(ys, dtype=np.float64), np.asarray(xs, dtype=np.float64)
    n, c, h, w = x.shape
    it = interp_matrices(ys, xs, h, w)
    rows = to_rows(x)
    out = (it.value @ rows).reshape(n, -1, c).transpose(0, 2, 1)
    return out, {"it": it, "rows": rows, "shape": x.shape}


def _bilinear_bwd(ctx, g):
    it, rows, shape = ctx["it"], ctx["rows"], ctx["shape"]
    n, c = shape[:2]
    gr = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(-1, c)
    gx = from_rows(it.value.T @ gr, shape)
    gy = ((it.dy @ rows) * gr).sum(axis=1).reshape(n, -1)
    gxs = ((it.dx @ rows) * gr).sum(axis=1).reshape(n, -1)
    return gx, gy, gxs


register("bilinear", _bilinear_fwd, _bilinear_bwd)


def bilinear(x, ys, xs):
    """Sample every channel of ``x`` at points (ys, xs), each of shape (n, P).

    Returns (n, c, P).  Neighbours outside the image contribute zero.
    """
    return call("bilinear", x, ys, xs)


def bilinear_sample(x, n: int, c: int, coord: SampleCoord) -> float:
    x = np.asarray(x, dtype=np.float64)
    sl = x[n : n + 1, c : c + 1]
    out = _bilinear_fwd(sl, np.array([[coord[0]]]), np.array([[coord[1]]]))[0]
    return float(out[0, 0, 0])


# ---------------------------------------------------------------- elementwise


def _check_same(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def add(a, b):
    _check_same(getattr(a, "value", a), getattr(b, "value", b))
    return call("add", a, b)


def mul(a, b):
    _check_same(getattr(a, "value", a), getattr(b, "value", b))
    return call("mul", a, b)


def scale(a, alpha: float):
    return call("scale", a, alpha=float(alpha))


def _relu_fwd(a):
    a = np.asarray(a, dtype=np.float64)
    return np.maximum(a, 0.0), {"mask": a > 0}


def _relu_bwd(ctx, g):
    return (g * ctx["mask"],)


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _sigmoid_fwd(a):
    s = _sigmoid(np.asarray(a, dtype=np.float64))
    return s, {"s": s}


def _sigmoid_bwd(ctx, g):
    s = ctx["s"]
    return (g * s * (1.0 - s),)


def _softmax_fwd(a):
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(a - a.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    return s, {"s": s}


def _softmax_bwd(ctx, g):
    s = ctx["s"]
    return (s * (g - (g * s).sum(axis=1, keepdims=True)),)


def _channel_mean_fwd(a):
    a = np.asarray(a, dtype=np.float64)
    return a.mean(axis=1, keepdims=True), {"shape": a.shape}


def _channel_mean_bwd(ctx, g):
    shape = ctx["shape"]
    return (np.broadcast_to(g / shape[1], shape).copy(),)


def _spatial_mean_fwd(a):
    a = np.asarray(a, dtype=np.float64)
    return a.mean(axis=(2, 3), keepdims=True), {"shape": a.shape}


def _spatial_mean_bwd(ctx, g):
    shape = ctx["shape"]
    return (np.broadcast_to(g / (shape[2] * shape[3]), shape).copy(),)


def _mean_fwd(a):
    a = np.asarray(a, dtype=np.float64)
    return np.array(a.mean()), {"shape": a.shape}


def _mean_bwd(ctx, g):
    shape = ctx["shape"]
    return (np.full(shape, float(g) / np.prod(shape)),)


def _concat_fwd(*parts):
    parts = [np.asarray(p, dtype=np.float64) for p in parts]
    return np.concatenate(parts, axis=1), {"sizes": [p.shape[1] for p in parts]}


def _concat_bwd(ctx, g):
    cuts = np.cumsum(ctx["sizes"])[:-1]
    return tuple(np.split(g, cuts, axis=1))


def _slice_fwd(a, start, stop):
    a = np.asarray(a, dtype=np.float64)
    return a[:, start:stop].copy(), {"shape": a.shape, "start": start, "stop": stop}


def _slice_bwd(ctx, g):
    out = np.zeros(ctx["shape"])
    out[:, ctx["start"] : ctx["stop"]] = g
    return (out,)


def _minimum_fwd(a, bound):
    a = np.asarray(a, dtype=np.float64)
    return np.minimum(a, bound), {"mask": a < bound}


def _minimum_bwd(ctx, g):
    return (g * ctx["mask"],)


register("relu", _relu_fwd, _relu_bwd)
register("sigmoid", _sigmoid_fwd, _sigmoid_bwd)
register("softmax_over_channels", _softmax_fwd, _softmax_bwd)
register("channel_mean", _channel_mean_fwd, _channel_mean_bwd)
register("spatial_mean", _spatial_mean_fwd, _spatial_mean_bwd)
register("mean", _mean_fwd, _mean_bwd)
register("concat_channels", _concat_fwd, _concat_bwd)
register("slice_channels", _slice_fwd, _slice_bwd)
register("clamp_max", _minimum_fwd, _minimum_bwd)


def relu(a):
    return call("relu", a)


def sigmoid(a):
    return call("sigmoid", a)


def softmax_over_channels(a):
    return call("softmax_over_channels", a)


def channel_mean(a):
    return call("channel_mean", a)


def spatial_mean(a):
    return call("spatial_mean", a)


def mean(a):
    return call("mean", a)


def concat_channels(*parts):
    return call("concat_channels", *parts)


def slice_channels(a, start: int, stop: int):
    return call("slice_channels", a, start=start, stop=stop)


def clamp_max(a, bound: float):
    return call("clamp_max", a, bound=float(bound))
