"""Finite-difference checks for every differentiable op, the composed FADC
layer and the whole toy model.

Each check draws a random point, contracts the op output with a fixed random
weight map to get a scalar, and compares tape gradients with central
differences (see :func:`fadc.autodiff.gradcheck`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .adadr import adadr_loss
from .adakern import apply_adakern, linear, predict_lambda
from .conv import adaptive_dilated_conv2d, dilated_conv2d, predict_dilation
from .freqselect import apply_freqselect, predict_selection
from .spectrum import HpConfig

KINK_MARGIN = 1e-4


@dataclass(frozen=True)
class Check:
    name: str
    build: Callable[[np.random.Generator], tuple]  # -> (f, leaves, near_kink)
    points: int = 10
    tol: float = 1e-5


def _contract(out, r):
    return ad.total(out * r)


def _weights(rng, out_shape):
    # magnitudes bounded away from zero: a near-zero weight makes the true
    # gradient entry smaller than the finite-difference round-off
    return rng.uniform(0.5, 1.5, size=out_shape) * rng.choice([-1.0, 1.0], size=out_shape)


def _off_grid(rng, low, high, size, gap=0.05):
    """Uniform draws whose fractional part stays ``gap`` away from integers."""
    v = rng.uniform(low, high, size=size)
    frac = v - np.floor(v)
    return np.floor(v) + gap + frac * (1.0 - 2.0 * gap)


def _none(name, a):
    return np.zeros(np.shape(a), dtype=bool)


def _near(target: float):
    def hook(name, a):
        return np.abs(a - target) < KINK_MARGIN
    return hook


def _near_integer(names):
    def hook(name, a):
        if name not in names:
            return np.zeros(np.shape(a), dtype=bool)
        return np.abs(a - np.round(a)) < KINK_MARGIN
    return hook


def _unary(fn, shape=(2, 3, 4, 5), hook=_none, low=-2.0, high=2.0):
    def build(rng):
        x = rng.uniform(low, high, size=shape)
        r = _weights(rng, np.shape(ad.value_of(fn(x))))
        return (lambda v: _contract(fn(v["x"]), r)), {"x": x}, hook
    return build


def _binary(fn, sa=(2, 3, 4, 5), sb=(2, 3, 4, 5)):
    def build(rng):
        a, b = rng.normal(size=sa), rng.normal(size=sb)
        r = _weights(rng, np.shape(ad.value_of(fn(a, b))))
        return (lambda v: _contract(fn(v["a"], v["b"]), r)), {"a": a, "b": b}, _none
    return build


def _scale_build(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    r = _weights(rng, x.shape)
    return (lambda v: _contract(T.scale(v["x"], -1.7), r)), {"x": x}, _none


def _sum_build(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    return (lambda v: ad.total(v["x"]) * 0.3), {"x": x}, _none


def _concat_build(rng):
    a, b = rng.normal(size=(2, 1, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    r = _weights(rng, (2, 4, 4, 4))
    return (lambda v: _contract(T.concat_channels(v["a"], v["b"]), r)), {"a": a, "b": b}, _none


def _bilinear_build(rng):
    x = rng.normal(size=(2, 2, 5, 6))
    ys = _off_grid(rng, -1.5, 5.5, (2, 7))
    xs = _off_grid(rng, -1.5, 6.5, (2, 7))
    r = _weights(rng, (2, 2, 7))
    f = lambda v: _contract(T.bilinear(v["x"], v["ys"], v["xs"]), r)
    return f, {"x": x, "ys": ys, "xs": xs}, _near_integer({"ys", "xs"})


def _dilated_build(per_sample: bool):
    def build(rng):
        d = int(rng.integers(1, 4))
        x = rng.normal(size=(2, 2, 7, 6))
        w = rng.normal(size=(2, 3, 2, 3, 3) if per_sample else (3, 2, 3, 3))
        b = rng.normal(size=3)
        r = _weights(rng, (2, 3, 7, 6))
        f = lambda v: _contract(dilated_conv2d(v["x"], v["w"], d, v["b"]), r)
        return f, {"x": x, "w": w, "b": b}, _none
    return build


def _adaptive_build(per_sample: bool):
    def build(rng):
        n = 2 if per_sample else 1
        x = rng.normal(size=(n, 2, 6, 6))
        w = rng.normal(size=(n, 2, 2, 3, 3) if per_sample else (2, 2, 3, 3))
        dm = _off_grid(rng, 0.3, 2.7, (n, 1, 6, 6))
        md = rng.uniform(0.1, 1.0, size=(n, 9, 6, 6))
        b = rng.normal(size=2)
        r = _weights(rng, (n, 2, 6, 6))
        f = lambda v: _contract(adaptive_dilated_conv2d(v["x"], v["w"], v["d"], v["m"], v["b"]), r)
        return f, {"x": x, "w": w, "d": dm, "m": md, "b": b}, _near_integer({"d"})
    return build


def _dilation_predictor_build(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    tw = rng.normal(0.0, 0.5, size=(10, 3, 3, 3))
    tb = rng.normal(size=10)
    r1, r2 = _weights(rng, (2, 1, 5, 5)), _weights(rng, (2, 9, 5, 5))

    def f(v):
        dmap, mod = predict_dilation(v["x"], v["tw"], v["tb"], 2.0, 3, 4.0)
        return _contract(dmap, r1) + _contract(mod, r2)
    return f, {"x": x, "tw": tw, "tb": tb}, _none


def _adakern_build(rng):
    w = rng.normal(size=(3, 2, 3, 3))
    lam = rng.uniform(0.0, 2.0, size=(2, 2, 3, 1))
    r = _weights(rng, (2, 3, 2, 3, 3))
    return (lambda v: _contract(apply_adakern(v["w"], v["lam"]), r)), {"w": w, "lam": lam}, _none


def _linear_build(rng):
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=5)
    r = _weights(rng, (3, 5))
    return (lambda v: _contract(linear(v["x"], v["w"], v["b"]), r)), {"x": x, "w": w, "b": b}, _none


def _lambda_predictor_build(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    pw, pb = rng.normal(size=(4, 3)), rng.normal(size=4)
    r = _weights(rng, (2, 2, 2, 1))
    f = lambda v: _contract(predict_lambda(v["x"], v["pw"], v["pb"]), r)
    return f, {"x": x, "pw": pw, "pb": pb}, _none


def _freqselect_build(rng):
    x = rng.normal(size=(2, 2, 16, 16))
    a = rng.uniform(0.0, 1.0, size=(2, 4, 16, 16))
    r = _weights(rng, x.shape)
    return (lambda v: _contract(apply_freqselect(v["x"], v["a"]), r)), {"x": x, "a": a}, _none


def _selection_predictor_build(rng):
    x = rng.normal(size=(2, 2, 6, 6))
    sw, sb = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    r = _weights(rng, (2, 4, 6, 6))
    f = lambda v: _contract(predict_selection(v["x"], v["sw"], v["sb"]), r)
    return f, {"x": x, "sw": sw, "sb": sb}, _none


def _adadr_build(rng):
    dm = rng.uniform(0.5, 4.0, size=(2, 1, 8, 8))
    hp = rng.uniform(0.0, 1.0, size=(2, 1, 8, 8))
    return (lambda v: adadr_loss(v["d"], hp)), {"d": dm}, _none


def _xent_build(rng):
    from .toyseg.model import cross_entropy
    logits = rng.normal(size=(2, 4, 5, 5))
    labels = rng.integers(0, 4, size=(2, 5, 5))
    return (lambda v: cross_entropy(v["z"], labels)), {"z": logits}, _none


def _layer_build(rng):
    from .toyseg.model import Toggles, forward_fadc_layer, init_fadc_layer
    st = init_fadc_layer(2, 2, rng, 3, 2.0, 8.0, Toggles())
    params = {k: rng.normal(0.0, 0.3, size=v.shape) for k, v in st.params.items()}
    x = rng.normal(size=(1, 2, 8, 8))
    r = _weights(rng, (1, 2, 8, 8))

    def f(v):
        p = {k: v[k] for k in params}
        return _contract(forward_fadc_layer(v["x"], st, p).out, r)
    return f, {"x": x, **params}, _none


def _model_build(rng):
    from .adadr import AdaDrLossConfig, total_loss
    from .toyseg.model import forward, init_model, loss_terms
    hp = HpConfig(8, 2.0)
    model = init_model(channels=3, classes=3, seed=int(rng.integers(1 << 30)), hp=hp)
    x = rng.uniform(0.0, 1.0, size=(1, 1, 16, 16))
    y = rng.integers(0, 3, size=(1, 16, 16))
    cfg = AdaDrLossConfig(0.25, 0.1, hp)

    def f(v):
        fr = forward(model, x, v)
        task, aux = loss_terms(model, fr, y, cfg)
        return total_loss(task, aux, cfg)

    def hook(name, a):
        # zero-initialised predictors put every sample on the integer grid,
        # a kink of bilinear sampling: nudge the dilation bias off it
        mask = np.zeros(np.shape(a), dtype=bool)
        if name.endswith("theta_b"):
            mask[0] = abs(a[0]) < KINK_MARGIN
        return mask
    return f, dict(model.params), hook


CHECKS: dict[str, Check] = {c.name: c for c in [
    Check("add", _binary(lambda a, b: ad.call("add", a, b))),
    Check("sub", _binary(lambda a, b: ad.call("sub", a, b))),
    Check("mul", _binary(lambda a, b: ad.call("mul", a, b), sb=(1, 3, 1, 5))),
    Check("scale", _scale_build),
    Check("sum", _sum_build),
    Check("relu", _unary(T.relu, hook=_near(0.0))),
    Check("sigmoid", _unary(T.sigmoid, low=-6.0, high=6.0)),
    Check("softmax_over_channels", _unary(T.softmax_over_channels)),
    Check("channel_mean", _unary(T.channel_mean)),
    Check("spatial_mean", _unary(T.spatial_mean)),
    Check("mean", _unary(T.mean)),
    Check("concat_channels", _concat_build),
    Check("slice_channels", _unary(lambda a: T.slice_channels(a, 1, 3))),
    Check("clamp_max", _unary(lambda a: T.clamp_max(a, 0.5), hook=_near(0.5))),
    Check("bilinear", _bilinear_build),
    Check("dilated_conv", _dilated_build(False)),
    Check("dilated_conv_per_sample", _dilated_build(True)),
    Check("adaptive_conv", _adaptive_build(False)),
    Check("adaptive_conv_per_sample", _adaptive_build(True)),
    Check("dilation_predictor", _dilation_predictor_build),
    Check("adakern", _adakern_build),
    Check("linear", _linear_build),
    Check("lambda_predictor", _lambda_predictor_build),
    Check("freqselect", _freqselect_build),
    Check("selection_predictor", _selection_predictor_build),
    Check("adadr_loss", _adadr_build),
    Check("softmax_xent", _xent_build),
    Check("fadc_layer", _layer_build, points=3),
    Check("model", _model_build, points=1, tol=1e-4),
]}


def run_check(check: Check, seed: int = 0) -> list[ad.GradcheckReport]:
    reports = []
    for i in range(check.points):
        rng = np.random.default_rng((seed, i, sum(check.name.encode())))
        f, leaves, hook = check.build(rng)
        rep = ad.gradcheck(f, leaves, tol=check.tol, op=f"{check.name}#{i}", near_kink=hook,
                           rng=rng, margin=KINK_MARGIN)
        reports.append(rep)
    return reports


def run_suite(names: list[str] | None = None, seed: int = 0) -> list[ad.GradcheckReport]:
    names = list(CHECKS) if names is None else names
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown op(s): {', '.join(unknown)}")
    out = []
    for n in names:
        out.extend(run_check(CHECKS[n], seed))
    return out
