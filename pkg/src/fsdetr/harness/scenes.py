"""Synthetic small-object scenes and the detection record type."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..losses import Box
from ..tensor import Tensor


class Detection(NamedTuple):
    cls: int
    score: float
    box: Box

    def as_list(self) -> list:
        return [int(self.cls), float(self.score), *map(float, self.box)]

    @classmethod
    def from_list(cls, row) -> "Detection":
        c, s, *b = row
        if len(b) != 4:
            raise ValueError(f"detection row needs cls, score and 4 box values, got {row!r}")
        return cls(int(c), float(s), Box(*map(float, b)))


BoxSet = list  # list[Detection]


@dataclass
class Scene:
    image: Tensor  # [3, H, W]
    gt: BoxSet
    seed: int
    requested: int

    @property
    def placed(self) -> int:
        return len(self.gt)

    @property
    def extents(self) -> tuple[int, int]:
        return self.image.shape[1], self.image.shape[2]

    def box_array(self) -> np.ndarray:
        return np.array([tuple(d.box) for d in self.gt], dtype=np.float64).reshape(-1, 4)


def _background(rng: np.random.Generator, canvas: int) -> np.ndarray:
    # low-frequency texture plus fine noise, roughly in [0, 0.5]
    coarse = rng.uniform(0.0, 1.0, size=(3, canvas // 8, canvas // 8))
    texture = np.kron(coarse, np.ones((8, 8)))
    yy, xx = np.mgrid[0:canvas, 0:canvas] / canvas
    freq = rng.uniform(2.0, 6.0, size=2)
    ripple = 0.5 + 0.5 * np.sin(2 * np.pi * (freq[0] * xx + freq[1] * yy) + rng.uniform(0, 2 * np.pi))
    noise = rng.normal(0.0, 0.05, size=(3, canvas, canvas))
    return 0.15 * texture + 0.15 * ripple[None] + 0.1 + noise


def gen_synthetic_scene(
    seed: int,
    n_objects: int,
    size_range_px: tuple[int, int] = (4, 10),
    canvas: int = 64,
    max_tries: int = 200,
) -> Scene:
    """Bright axis-aligned rectangles on a textured background.

    Rectangles do not overlap (a one-pixel gap is kept) so every box is
    exactly the footprint of its object.  Placement is rejection-sampled;
    when ``max_tries`` is exhausted the scene keeps the objects placed so far
    and ``Scene.placed < Scene.requested`` reports the shortfall.
    """
    lo, hi = size_range_px
    if n_objects < 0:
        raise ValueError("n_objects must be >= 0")
    if not 1 <= lo <= hi <= canvas:
        raise ValueError(f"size range {size_range_px} must lie within [1, {canvas}]")
    rng = np.random.default_rng(seed)
    image = _background(rng, canvas)
    occupied = np.zeros((canvas, canvas), dtype=bool)
    gt: BoxSet = []
    tries = 0
    while len(gt) < n_objects and tries < max_tries:
        tries += 1
        w, h = rng.integers(lo, hi + 1, size=2)
        x0 = int(rng.integers(0, canvas - w + 1))
        y0 = int(rng.integers(0, canvas - h + 1))
        if occupied[max(y0 - 1, 0) : y0 + h + 1, max(x0 - 1, 0) : x0 + w + 1].any():
            continue
        occupied[y0 : y0 + h, x0 : x0 + w] = True
        color = rng.uniform(0.75, 1.0, size=(3, 1, 1)) + rng.normal(0.0, 0.03, size=(3, h, w))
        image[:, y0 : y0 + h, x0 : x0 + w] = color
        box = Box((x0 + w / 2) / canvas, (y0 + h / 2) / canvas, w / canvas, h / canvas)
        gt.append(Detection(0, 1.0, box))
    return Scene(Tensor(image), gt, seed, n_objects)


def make_dataset(seed: int, n_scenes: int, n_objects: int, size_range_px, canvas: int) -> list[Scene]:
    """``n_scenes`` scenes with per-scene seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n_scenes)
    return [gen_synthetic_scene(int(s), n_objects, size_range_px, canvas) for s in seeds]
