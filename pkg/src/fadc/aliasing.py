"""Gridding demo: a 3x3 mean filter applied at fixed dilation 4, fixed
dilation 1 and with a learned per-pixel dilation, on an image that holds a
smooth ramp and a period-2 checkerboard.

A period-2 checkerboard sampled every 4 pixels looks constant, so the
D=4 filter passes it through untouched; at D=1 it is averaged away.  The
metric is the top-band power of the filter response inside the checker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .adadr import AdaDrLossConfig, adadr_loss, total_loss
from .autodiff import Tape, call
from .conv import adaptive_dilated_conv2d, dilated_conv2d, init_predictor, predict_dilation
from .spectrum import HpConfig, band_mask, band_power, hp_power_map

HIGH_BAND = (0.25, 0.5)


@dataclass(frozen=True)
class DemoConfig:
    size: int = 64
    checker: tuple[int, int, int, int] = (8, 56, 32, 64)  # rows lo/hi, cols lo/hi
    d_fixed: int = 4
    d_init: float = 4.0
    d_max: float = 8.0
    steps: int = 150
    lr: float = 2.0
    w_adadr: float = 0.01
    hp: HpConfig = HpConfig(8, 2.0, 1)
    margin: int = 8  # crop inside the checker, beyond the widest footprint


def demo_image(cfg: DemoConfig = DemoConfig(), constant: bool = False) -> np.ndarray:
    n = cfg.size
    if constant:
        return np.full((n, n), 0.5)
    yy, xx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    img = 0.3 + 0.4 * (yy + xx) / (2.0 * (n - 1))
    r0, r1, c0, c1 = cfg.checker
    chk = 0.2 + 0.6 * ((yy + xx) % 2)
    img[r0:r1, c0:c1] = chk[r0:r1, c0:c1]
    return img


def mean_kernel(channels: int = 2) -> np.ndarray:
    """3x3 box filter on channel 0; the guide channel does not reach the output."""
    w = np.zeros((1, channels, 3, 3))
    w[0, 0] = 1.0 / 9.0
    return w


def features(img: np.ndarray, hp: HpConfig) -> np.ndarray:
    """Image plus its normalised local high-frequency power as a guide channel."""
    x = img[None, None]
    g = hp_power_map(x, hp)
    g = g / g.max() if g.max() > 0 else g
    return np.concatenate([x, g], axis=1)


def low_pass_target(img: np.ndarray) -> np.ndarray:
    return dilated_conv2d(img[None, None], mean_kernel(1), 1)


def _loss(theta, x, target, hp_map, cfg: DemoConfig):
    dmap, _ = predict_dilation(x, theta["w"], theta["b"], cfg.d_init, 3, cfg.d_max)
    y = adaptive_dilated_conv2d(x, mean_kernel(x.shape[1]), dmap)
    diff = call("sub", y, target)
    task = T.mean(call("mul", diff, diff))
    lcfg = AdaDrLossConfig(0.25, cfg.w_adadr, cfg.hp)
    return total_loss(task, [adadr_loss(dmap, hp_map, lcfg)], lcfg), dmap


def train_adaptive(img: np.ndarray, cfg: DemoConfig = DemoConfig()):
    """Fit the dilation predictor only; the filter itself stays the box."""
    x = features(img, cfg.hp)
    target = low_pass_target(img)
    hp_map = hp_power_map(img[None, None], cfg.hp)
    theta = init_predictor(x.shape[1])
    for _ in range(cfg.steps):
        tape = Tape()
        tv = {k: tape.leaf(v, k) for k, v in theta.items()}
        loss, _ = _loss(tv, x, target, hp_map, cfg)
        g = tape.backward(loss)
        for k, v in tv.items():
            theta[k] = theta[k] - cfg.lr * g[v.id]
    _, dmap = _loss(theta, x, target, hp_map, cfg)
    return theta, np.asarray(dmap)


def gridding_metric(resp: np.ndarray, cfg: DemoConfig = DemoConfig()) -> float:
    """Top-band power of the response over the checker interior."""
    r0, r1, c0, c1 = cfg.checker
    m = cfg.margin
    crop = np.asarray(resp)[r0 + m : r1 - m, c0 + m : min(c1 - m, cfg.size - m)]
    return band_power(crop, band_mask(*crop.shape, *HIGH_BAND))


@dataclass
class DemoResult:
    image: np.ndarray
    fixed: np.ndarray
    unit: np.ndarray
    adaptive: np.ndarray
    dmap: np.ndarray
    metrics: dict[str, float]

    @property
    def ratio(self) -> float:
        a = self.metrics["adaptive"]
        return self.metrics["fixed"] / a if a > 0 else float("inf")


def run_demo(cfg: DemoConfig = DemoConfig(), constant: bool = False) -> DemoResult:
    img = demo_image(cfg, constant)
    x = img[None, None]
    fixed = dilated_conv2d(x, mean_kernel(1), cfg.d_fixed)[0, 0]
    unit = dilated_conv2d(x, mean_kernel(1), 1)[0, 0]
    _, dmap = train_adaptive(img, cfg)
    adaptive = adaptive_dilated_conv2d(features(img, cfg.hp), mean_kernel(2), dmap)[0, 0]
    metrics = {
        "fixed": gridding_metric(fixed, cfg),
        "unit": gridding_metric(unit, cfg),
        "adaptive": gridding_metric(adaptive, cfg),
    }
    return DemoResult(img, fixed, unit, adaptive, dmap[0, 0], metrics)
