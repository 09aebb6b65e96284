"""Theoretical receptive field of a chain of convolutions."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass


@dataclass(frozen=True)
class LayerSpec:
    k: int
    s: int = 1
    d: float = 1.0

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.s < 1:
            raise ValueError("stride must be >= 1")
        if self.d <= 0:
            raise ValueError("dilation must be positive")

    @property
    def extent(self) -> int:
        # pixels touched on one side are ceil(r*d): bilinear taps at fractional
        # offsets reach the next integer; equals (k-1)*d for integer d
        r = (self.k - 1) // 2
        return 2 * math.ceil(r * self.d - 1e-9)


def receptive_field(chain: list[LayerSpec]) -> int:
    rf, jump = 1, 1
    for layer in chain:
        rf += layer.extent * jump
        jump *= layer.s
    return rf


_TOKEN = re.compile(r"^\s*(\d+)x(\d+)d(\d+(?:\.\d+)?)\s*$")


def parse_chain(text: str) -> list[LayerSpec]:
    """Parse ``"3x1d1,3x2d2.5"`` (kernel x stride d dilation) into layer specs."""
    chain = []
    for tok in text.split(","):
        m = _TOKEN.match(tok)
        if not m:
            raise ValueError(f"bad layer spec {tok!r}; expected e.g. 3x1d2")
        chain.append(LayerSpec(int(m.group(1)), int(m.group(2)), float(m.group(3))))
    if not chain:
        raise ValueError("empty chain")
    return chain
