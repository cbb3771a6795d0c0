"""Ground-truth density maps from dot annotations.

Coordinates are continuous: pixel ``(i, j)`` covers ``[j, j+1) x [i, i+1)``
in ``(x, y)`` so its centre sits at ``(j + 0.5, i + 0.5)``. A dot is first
splatted bilinearly onto the four pixel centres around it (this is the dot
image ``Y``) and then smoothed with a normalized Gaussian ``G``, giving
``D = G * Y``. The kernel is symmetric, so convolution and cross-correlation
coincide. Kernel mass that falls outside the image is dropped, which is why
the total of a map can be fractional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class DotAnnotation:
    points: np.ndarray  # (k, 2) float64 as (x=column, y=row)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        self.points = pts.reshape(-1, 2)

    def __len__(self):
        return len(self.points)

    def scaled(self, factor: float) -> "DotAnnotation":
        return DotAnnotation(self.points * factor)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Square kernel of side ``2 * ceil(3 sigma) + 1`` summing to one."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(3 * sigma)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _splat(x: float, y: float):
    """Bilinear weights of a continuous point over its four nearest pixel centres."""
    u, v = x - 0.5, y - 0.5
    j0, i0 = math.floor(u), math.floor(v)
    fx, fy = u - j0, v - i0
    for di, wy in ((0, 1.0 - fy), (1, fy)):
        for dj, wx in ((0, 1.0 - fx), (1, fx)):
            w = wy * wx
            if w > 0.0:
                yield i0 + di, j0 + dj, w


def render_density(dots: DotAnnotation, h: int, w: int, sigma: float) -> np.ndarray:
    """Render an ``h x w`` float32 density map; each interior dot adds unit mass."""
    kernel = gaussian_kernel(sigma)
    rad = kernel.shape[0] // 2
    pad = rad + 1
    canvas = np.zeros((h + 2 * pad, w + 2 * pad), dtype=np.float64)
    side = kernel.shape[0]
    for x, y in dots.points:
        for i, j, wt in _splat(float(x), float(y)):
            r0, c0 = i - rad + pad, j - rad + pad
            # dots are expected in-bounds; anything further out contributes nothing
            if r0 < 0 or c0 < 0 or r0 + side > canvas.shape[0] or c0 + side > canvas.shape[1]:
                continue
            canvas[r0:r0 + side, c0:c0 + side] += wt * kernel
    return canvas[pad:pad + h, pad:pad + w].astype(np.float32)


def local_count(density: np.ndarray, rect) -> float:
    """Sum of the density over the ``r x r`` square at ``(row0, col0)``."""
    row0, col0, r = (int(v) for v in rect)
    h, w = density.shape
    if r < 1 or row0 < 0 or col0 < 0 or row0 + r > h or col0 + r > w:
        raise IndexError(f"rectangle (row0={row0}, col0={col0}, r={r}) outside {h}x{w} map")
    return float(density[row0:row0 + r, col0:col0 + r].sum(dtype=np.float64))


def total_count(density: np.ndarray) -> float:
    return float(np.sum(density, dtype=np.float64))
