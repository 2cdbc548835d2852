"""Deterministic synthetic shape images for desk-scale training.

Every sample is a function of (seed, index) alone: a counter-based Philox
stream keyed by that pair draws the class, geometry, colors, and noise, so
regenerating any sample reproduces it bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ShapeSample", "gen_shapes", "CLASS_NAMES"]

CLASS_NAMES = ("circle", "square", "triangle")
IMAGE_SIZE = 64
NOISE_SIGMA = 0.05


@dataclass
class ShapeSample:
    image: np.ndarray   # float32 [3, 64, 64] in [0, 1]
    label: int          # 0 circle, 1 square, 2 triangle


def _sample_rng(seed, index):
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def _make_sample(seed, index, noise_sigma):
    rng = _sample_rng(seed, index)
    label = int(rng.integers(0, len(CLASS_NAMES)))
    cx, cy = rng.uniform(20.0, 44.0, size=2)
    radius = rng.uniform(10.0, 20.0)
    background = rng.uniform(0.0, 1.0, size=3)
    foreground = rng.uniform(0.0, 1.0, size=3)
    while np.linalg.norm(foreground - background) < 0.3:
        foreground = rng.uniform(0.0, 1.0, size=3)

    ys, xs = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    if label == 0:
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2
    elif label == 1:
        half = radius * 0.9
        mask = (np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= half)
    else:
        top = cy - radius
        mask = (ys >= top) & (ys <= cy + radius) & (np.abs(xs - cx) <= (ys - top) / 2.0)

    image = np.where(mask[None, :, :], foreground[:, None, None], background[:, None, None])
    if noise_sigma > 0:
        image = image + rng.normal(0.0, noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return ShapeSample(image=image, label=label)


def gen_shapes(seed, n, noise_sigma=NOISE_SIGMA):
    """n deterministic samples; sample i depends only on (seed, i)."""
    if n < 1:
        raise ValueError("need at least one sample")
    return [_make_sample(seed, i, noise_sigma) for i in range(n)]
