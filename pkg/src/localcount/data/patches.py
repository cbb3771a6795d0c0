"""Working-resolution preparation, dense patch sampling and preprocessing."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from PIL import Image

from ..density import DotAnnotation, local_count
from ..errors import DataError
from .manifest import ImageRecord, load_annotation

# channel means are snapped to this grid so that subtract/add round-trips
# exactly in float32 for integer-valued pixels
MEAN_QUANTUM = 2.0 ** -16


class TargetMode(str, enum.Enum):
    LOCAL_COUNT = "local_count"
    LOCAL_DENSITY = "local_density"
    GLOBAL_COUNT = "global_count"


@dataclass
class SamplingConfig:
    r: int = 32
    s_r: int | None = None  # None means r // 4
    s_e: int | None = None  # None means r // 4
    sigma: float = 8.0
    resize_factor: float = 0.125
    target_mode: TargetMode = TargetMode.LOCAL_COUNT

    def __post_init__(self):
        self.r = int(self.r)
        self.s_r = self.r // 4 if self.s_r is None else int(self.s_r)
        self.s_e = self.r // 4 if self.s_e is None else int(self.s_e)
        self.target_mode = TargetMode(self.target_mode)
        if self.r < 8:
            raise ValueError(f"patch size r must be >= 8, got {self.r}")
        if self.s_r < 1 or self.s_e < 1:
            raise ValueError(f"strides must be >= 1, got s_r={self.s_r}, s_e={self.s_e}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.resize_factor > 0:
            raise ValueError(f"resize_factor must be > 0, got {self.resize_factor}")


@dataclass
class PatchSample:
    """One ``r x r x 3`` sub-image and its regression target.

    ``pixels`` is a view into the working image, not yet mean-subtracted;
    :func:`subtract_mean` / :func:`stack_batch` apply the training mean.
    """

    pixels: np.ndarray
    target: Any
    source: tuple = field(default=())


# -- images ---------------------------------------------------------------

def load_image(path) -> Image.Image:
    try:
        with Image.open(path) as im:
            return im.convert("RGB")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image: {exc}", path) from exc


def resize_image(image: Image.Image, factor: float) -> Image.Image:
    if factor == 1:
        return image
    w, h = image.size
    size = (max(1, round(w * factor)), max(1, round(h * factor)))
    return image.resize(size, Image.BILINEAR)


def to_array(image: Image.Image) -> np.ndarray:
    """H x W x 3 float32 in [0, 255]."""
    return np.asarray(image, dtype=np.float32)


def resize_array(pixels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an H x W x 3 array to ``(rows, cols)``."""
    im = Image.fromarray(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))
    return to_array(im.resize((size[1], size[0]), Image.BILINEAR))


def prepare_arrays(image: Image.Image, dots: DotAnnotation, factor: float, name: str = "image"):
    w, h = image.size
    pts = dots.points
    if len(pts) and (pts.min() < 0 or (pts[:, 0] > w).any() or (pts[:, 1] > h).any()):
        raise DataError(f"{name}: annotation outside the {w}x{h} image")
    resized = resize_image(image, factor)
    rw, rh = resized.size
    scaled = pts * factor
    if len(scaled):
        # size rounding may shave a fraction of a pixel off the far edges
        scaled[:, 0] = np.clip(scaled[:, 0], 0, rw)
        scaled[:, 1] = np.clip(scaled[:, 1], 0, rh)
    return to_array(resized), DotAnnotation(scaled)


def prepare_image(record: ImageRecord, config: SamplingConfig):
    """Load a record at working resolution: ``(H x W x 3 float32, DotAnnotation)``."""
    image = load_image(record.image_path)
    dots = load_annotation(record.annotation_path)
    return prepare_arrays(image, dots, config.resize_factor, name=str(record.image_path))


# -- patches --------------------------------------------------------------

def lattice(extent: int, r: int, stride: int) -> list[int]:
    if extent < r:
        return []
    return list(range(0, extent - r + 1, stride))


def extract_training_patches(image: np.ndarray, density: np.ndarray, config: SamplingConfig,
                             source_id: Any = None) -> list[PatchSample]:
    if image.shape[:2] != density.shape:
        raise ValueError(f"image {image.shape[:2]} and density {density.shape} differ in size")
    mode = config.target_mode
    if mode is TargetMode.GLOBAL_COUNT:
        raise ValueError("global_count mode trains on whole images, not patches")
    r = config.r
    h, w = density.shape
    if h < r or w < r:
        warnings.warn(f"image {source_id!r} ({h}x{w}) is smaller than r={r}; no patches", stacklevel=2)
        return []
    out = []
    for r0 in lattice(h, r, config.s_r):
        for c0 in lattice(w, r, config.s_r):
            if mode is TargetMode.LOCAL_COUNT:
                target = local_count(density, (r0, c0, r))
            else:
                target = density[r0:r0 + r, c0:c0 + r].copy()
            out.append(PatchSample(image[r0:r0 + r, c0:c0 + r], target, (source_id, r0, c0)))
    return out


def compute_channel_mean(samples: Sequence[PatchSample], chunk: int = 4096) -> np.ndarray:
    if not samples:
        raise ValueError("cannot compute a mean over zero samples")
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for i in range(0, len(samples), chunk):
        block = np.stack([s.pixels for s in samples[i:i + chunk]])
        total += block.sum(axis=(0, 1, 2), dtype=np.float64)
        count += block.shape[0] * block.shape[1] * block.shape[2]
    return np.round(total / count / MEAN_QUANTUM) * MEAN_QUANTUM


def subtract_mean(sample: PatchSample, means: np.ndarray) -> PatchSample:
    pixels = sample.pixels - np.asarray(means, dtype=np.float32)
    return PatchSample(pixels, sample.target, sample.source)


def add_mean(sample: PatchSample, means: np.ndarray) -> PatchSample:
    pixels = sample.pixels + np.asarray(means, dtype=np.float32)
    return PatchSample(pixels, sample.target, sample.source)


def stack_batch(pixels: Sequence[np.ndarray], means: np.ndarray) -> np.ndarray:
    """Mean-subtract and stack H x W x 3 arrays into an (n, 3, H, W) tensor.

    The result is a channels-last view (its memory is n x H x W x 3).
    """
    batch = np.stack(pixels).astype(np.float32, copy=False) - np.asarray(means, dtype=np.float32)
    return batch.transpose(0, 3, 1, 2)


def stack_targets(samples: Sequence[PatchSample]) -> np.ndarray:
    t = np.array([s.target for s in samples], dtype=np.float32)
    return t.reshape(len(samples), -1)


def shuffle_split(samples: Sequence, train_fraction: float, seed: int):
    """Seeded permutation; the first ``ceil(fraction * N)`` go to training."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(samples)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(n, math.ceil(round(train_fraction * n, 9)))
    return [samples[i] for i in perm[:n_train]], [samples[i] for i in perm[n_train:]]
