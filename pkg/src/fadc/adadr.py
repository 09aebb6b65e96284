"""Auxiliary loss that lowers dilation where local high-frequency power is
high and raises it where that power is low."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import call, register
from .spectrum import HpConfig, hp_partition


@dataclass(frozen=True)
class AdaDrLossConfig:
    q: float = 0.25
    weight: float = 0.01
    hp: HpConfig = field(default_factory=HpConfig)

    def __post_init__(self):
        if not 0 < self.q <= 0.5:
            raise ValueError("quantile must lie in (0, 0.5]")
        if self.weight < 0:
            raise ValueError("loss weight must be non-negative")


def _loss_fwd(dmap, plus, minus):
    dmap = np.asarray(dmap, dtype=np.float64)
    n = dmap.shape[0]
    flat = dmap.reshape(n, -1)
    p, m = plus.reshape(n, -1), minus.reshape(n, -1)
    cp, cm = p.sum(axis=1), m.sum(axis=1)
    per_image = (flat * p).sum(axis=1) / cp - (flat * m).sum(axis=1) / cm
    grad = (p / cp[:, None] - m / cm[:, None]) / n
    return np.array(per_image.mean()), {"grad": grad.reshape(dmap.shape)}


def _loss_bwd(ctx, g):
    return float(g) * ctx["grad"], None, None


register("adadr_loss", _loss_fwd, _loss_bwd)


def adadr_loss(dmap, hp, cfg: AdaDrLossConfig = AdaDrLossConfig()):
    """mean(D over HP+) - mean(D over HP-), averaged over images.

    ``hp`` is a constant (n, 1, h, w) map: no gradient reaches it.
    """
    dv = getattr(dmap, "value", dmap)
    hp = np.asarray(getattr(hp, "value", hp), dtype=np.float64)
    if np.shape(dv) != hp.shape or hp.shape[1] != 1:
        raise ValueError(f"dilation map {np.shape(dv)} and HP map {hp.shape} are misaligned")
    plus, minus = hp_partition(hp, cfg.q)
    return call("adadr_loss", dmap, plus.astype(np.float64), minus.astype(np.float64))


def total_loss(task_loss, layer_losses, cfg: AdaDrLossConfig = AdaDrLossConfig()):
    """task + weight * sum of the per-layer AdaDR terms."""
    out = task_loss
    if cfg.weight == 0:
        return out
    for term in layer_losses:
        out = out + call("scale", term, alpha=cfg.weight)
    return out
