"""Synthetic texture-segmentation images.

Each image is a background texture with one to three rectangles or ellipses
painted over it.  The label of a pixel is the texture class of its region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE_SIGMA = 0.02
MIN_REGION = 16

# class id -> texture; the classes cycle through this list when C > 4
TEXTURES = ("gradient", "stripes_h", "stripes_v", "checker")


@dataclass(frozen=True)
class SynthSample:
    image: np.ndarray   # (1, 1, h, w) in [0, 1]
    labels: np.ndarray  # (h, w) int64


def texture(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    if kind == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(theta) * yy + np.sin(theta) * xx) / max(h, w)
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
        lo = rng.uniform(0.45, 0.6)
        return lo + rng.uniform(0.15, 0.35) * ramp
    lo, hi = rng.uniform(0.1, 0.35), rng.uniform(0.65, 0.9)
    if kind == "stripes_h":
        on = ((yy + rng.integers(4)) // 2) % 2
    elif kind == "stripes_v":
        on = ((xx + rng.integers(4)) // 2) % 2
    elif kind == "checker":
        on = (yy + xx + rng.integers(2)) % 2
    else:
        raise ValueError(f"unknown texture {kind!r}")
    return lo + (hi - lo) * on


def _shape_mask(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rh = rng.uniform(0.15, 0.35) * h
    rw = rng.uniform(0.15, 0.35) * w
    cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
    if rng.random() < 0.5:
        return (np.abs(yy - cy) <= rh) & (np.abs(xx - cx) <= rw)
    return ((yy - cy) / rh) ** 2 + ((xx - cx) / rw) ** 2 <= 1.0


def generate_sample(h: int, w: int, classes: int, rng: np.random.Generator) -> SynthSample:
    while True:
        n_regions = int(rng.integers(2, 5))
        labels = np.full((h, w), int(rng.integers(classes)), dtype=np.int64)
        owner = np.zeros((h, w), dtype=np.int64)
        region_class = [int(labels[0, 0])]
        for r in range(1, n_regions):
            mask = _shape_mask(h, w, rng)
            cls = int(rng.integers(classes))
            labels[mask] = cls
            owner[mask] = r
            region_class.append(cls)
        sizes = np.bincount(owner.ravel(), minlength=n_regions)
        if sizes.min() >= MIN_REGION:
            break
    img = np.zeros((h, w))
    for r, cls in enumerate(region_class):
        tex = texture(TEXTURES[cls % len(TEXTURES)], h, w, rng)
        img[owner == r] = tex[owner == r]
    img = np.clip(img + rng.normal(0.0, NOISE_SIGMA, size=img.shape), 0.0, 1.0)
    return SynthSample(img[None, None], labels)


def generate_dataset(size: int, image_size: int = 64, classes: int = 4, seed: int = 0) -> list[SynthSample]:
    rng = np.random.default_rng(seed)
    return [generate_sample(image_size, image_size, classes, rng) for _ in range(size)]


def split(dataset: list[SynthSample], seed: int, train_frac: float = 0.8):
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = int(round(train_frac * len(dataset)))
    return [dataset[i] for i in order[:cut]], [dataset[i] for i in order[cut:]]


def stack(samples: list[SynthSample]) -> tuple[np.ndarray, np.ndarray]:
    return (np.concatenate([s.image for s in samples], axis=0),
            np.stack([s.labels for s in samples], axis=0))
