"""Seeded synthetic counting dataset.

Each image is a smooth textured background with a random number of bright,
elongated, randomly oriented blobs on top, plus pixel noise. The annotation
lists every blob centre. Images are written at working resolution, so the
dataset's ``config.txt`` sets ``resize_factor=1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..density import DotAnnotation
from ..errors import DataError
from .manifest import DatasetManifest, ImageRecord, Split, write_annotation, write_manifest


@dataclass
class SynthConfig:
    n_images: int = 250
    test_fraction: float = 0.2
    height: int = 256
    width: int = 320
    min_objects: int = 15
    max_objects: int = 45
    train_sequences: int = 4
    test_sequences: int = 2
    min_axis: float = 4.0  # semi-major axis range in pixels
    max_axis: float = 8.0
    min_ratio: float = 2.0
    max_ratio: float = 4.0
    noise: float = 6.0

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if not 0 <= self.test_fraction <= 1:
            raise ValueError("test_fraction must be in [0, 1]")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError("need 0 <= min_objects <= max_objects")
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive")

    @property
    def n_test(self) -> int:
        return int(round(self.n_images * self.test_fraction))


@dataclass
class SynthSummary:
    out_dir: Path
    counts: list[int]
    splits: dict[str, int]

    @property
    def total_objects(self) -> int:
        return sum(self.counts)


def _sequence_style(seed: int, seq_index: int):
    rng = np.random.default_rng([seed, 10_000 + seq_index])
    base = np.array([70.0, 110.0, 50.0]) * rng.uniform(0.7, 1.2)
    tint = rng.uniform(-15, 15, size=3)
    return base + tint, rng.uniform(20, 45)


def _background(rng, h, w, base, contrast):
    bg = np.zeros((h, w, 3), dtype=np.float64)
    for cells, weight in ((6, 1.0), (20, 0.5)):
        coarse = rng.uniform(-1, 1, size=(cells + 1, cells + 1)).astype(np.float32)
        smooth = np.asarray(Image.fromarray(coarse).resize((w, h), Image.BICUBIC), dtype=np.float64)
        bg += weight * smooth[..., None]
    bg = base + contrast * bg * np.array([0.8, 1.0, 0.7])
    return bg


def _add_blob(canvas, x, y, a, b, theta, amp, colour):
    h, w = canvas.shape[:2]
    reach = int(math.ceil(3 * a)) + 1
    r0, r1 = max(0, int(y) - reach), min(h, int(y) + reach + 1)
    c0, c1 = max(0, int(x) - reach), min(w, int(x) + reach + 1)
    if r0 >= r1 or c0 >= c1:
        return
    yy, xx = np.mgrid[r0:r1, c0:c1]
    dx = xx + 0.5 - x
    dy = yy + 0.5 - y
    ct, st = math.cos(theta), math.sin(theta)
    u = ct * dx + st * dy
    v = -st * dx + ct * dy
    blob = amp * np.exp(-0.5 * ((u / a) ** 2 + (v / b) ** 2))
    canvas[r0:r1, c0:c1] += blob[..., None] * colour


def render_image(cfg: SynthConfig, rng: np.random.Generator, style):
    """Draw one image; returns ``(uint8 H x W x 3, DotAnnotation)``."""
    h, w = cfg.height, cfg.width
    base, contrast = style
    canvas = _background(rng, h, w, base, contrast)
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    pts = np.empty((n, 2))
    for k in range(n):
        x, y = rng.uniform(0, w), rng.uniform(0, h)
        a = rng.uniform(cfg.min_axis, cfg.max_axis)
        b = a / rng.uniform(cfg.min_ratio, cfg.max_ratio)
        theta = rng.uniform(0, math.pi)
        amp = rng.uniform(90, 150)
        colour = np.array([1.0, 0.9, 0.55]) * rng.uniform(0.85, 1.15, size=3)
        _add_blob(canvas, x, y, a, b, theta, amp, colour)
        pts[k] = (x, y)
    canvas += rng.normal(0, cfg.noise, size=canvas.shape)
    img = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    return img, DotAnnotation(pts)


def synth_generate(cfg: SynthConfig, seed: int, out_dir) -> SynthSummary:
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory: {exc}", out_dir) from exc

    n_test = cfg.n_test
    n_train = cfg.n_images - n_test
    records, counts = [], []
    styles = {}
    log_lines = ["image,n_objects"]
    for i in range(cfg.n_images):
        if i < n_train:
            seq_idx = i * cfg.train_sequences // max(n_train, 1)
            seq, split = f"synth_train_{seq_idx}", Split.TRAIN
        else:
            seq_idx = cfg.train_sequences + (i - n_train) * cfg.test_sequences // max(n_test, 1)
            seq, split = f"synth_test_{seq_idx - cfg.train_sequences}", Split.TEST
        if seq_idx not in styles:
            styles[seq_idx] = _sequence_style(seed, seq_idx)
        rng = np.random.default_rng([seed, i])
        img, dots = render_image(cfg, rng, styles[seq_idx])
        name = f"img_{i:05d}"
        img_path = out_dir / "images" / f"{name}.png"
        ann_path = out_dir / "annotations" / f"{name}.csv"
        try:
            Image.fromarray(img).save(img_path, format="PNG")
            write_annotation(dots, ann_path)
        except OSError as exc:
            raise DataError(f"cannot write dataset files: {exc}", out_dir) from exc
        records.append(ImageRecord(img_path, ann_path, seq, split))
        counts.append(len(dots))
        log_lines.append(f"{name},{len(dots)}")

    write_manifest(DatasetManifest(records), out_dir / "manifest.csv")
    (out_dir / "synth_log.csv").write_text("\n".join(log_lines) + "\n")
    (out_dir / "config.txt").write_text(
        "# synthetic images are generated at working resolution\nresize_factor=1\n"
    )
    splits = {s.value: sum(1 for r in records if r.split is s) for s in Split}
    return SynthSummary(out_dir, counts, splits)
