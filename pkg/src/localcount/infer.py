"""Whole-image counting from overlapping local predictions.

Each ``r x r`` window's count ``c_k`` is spread evenly (``c_k / r**2``) over
its pixels into a count map ``C`` while a coverage map ``P`` records how many
windows touched each pixel. The image count is ``sum(C / P)`` over covered
pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data.patches import TargetMode, lattice, resize_array, stack_batch


@dataclass
class WindowSet:
    offsets: list[tuple[int, int]]
    r: int
    h: int
    w: int

    def __len__(self):
        return len(self.offsets)


@dataclass
class CountResult:
    count: float
    count_map: np.ndarray  # C, float64
    coverage: np.ndarray  # P, int32

    @property
    def normalized(self) -> np.ndarray:
        """Per-pixel count ``C / P`` (zero where nothing was predicted)."""
        return normalized_map(self.count_map, self.coverage)


def _axis_offsets(extent: int, r: int, stride: int) -> list[int]:
    offs = lattice(extent, r, stride)
    if offs[-1] + r < extent:
        offs.append(extent - r)
    return offs


def enumerate_windows(h: int, w: int, r: int, s_e: int) -> WindowSet:
    """Stride-``s_e`` lattice plus one edge-aligned window per axis if needed."""
    if h < r or w < r:
        raise ValueError(f"image {h}x{w} is smaller than the window size r={r}")
    if s_e < 1:
        raise ValueError(f"stride must be >= 1, got {s_e}")
    rows = _axis_offsets(h, r, s_e)
    cols = _axis_offsets(w, r, s_e)
    return WindowSet([(r0, c0) for r0 in rows for c0 in cols], r, h, w)


def crop_windows(image: np.ndarray, windows: WindowSet) -> list[np.ndarray]:
    r = windows.r
    return [image[r0:r0 + r, c0:c0 + r] for r0, c0 in windows.offsets]


def predict_local_counts(network, image: np.ndarray, windows: WindowSet, means, batch_size: int = 512) -> np.ndarray:
    """Inference-mode count per window, clamped at zero."""
    crops = crop_windows(image, windows)
    out = np.empty(len(crops), dtype=np.float64)
    for i in range(0, len(crops), batch_size):
        y = network.forward(stack_batch(crops[i:i + batch_size], means), mode="infer")
        # a local-density network predicts per-pixel density; its integral is the count
        out[i:i + batch_size] = y.sum(axis=1, dtype=np.float64)
    return np.maximum(out, 0.0)


def merge_counts(windows: WindowSet, counts, h: int | None = None, w: int | None = None):
    """Accumulate ``(C, P)`` in window order."""
    counts = np.asarray(counts, dtype=np.float64)
    if len(counts) != len(windows.offsets):
        raise ValueError(f"{len(counts)} counts for {len(windows.offsets)} windows")
    h = windows.h if h is None else h
    w = windows.w if w is None else w
    r = windows.r
    C = np.zeros((h, w), dtype=np.float64)
    P = np.zeros((h, w), dtype=np.int32)
    area = float(r * r)
    for (r0, c0), c in zip(windows.offsets, counts):
        C[r0:r0 + r, c0:c0 + r] += c / area
        P[r0:r0 + r, c0:c0 + r] += 1
    return C, P


def normalized_map(C: np.ndarray, P: np.ndarray) -> np.ndarray:
    out = np.zeros_like(C, dtype=np.float64)
    covered = P > 0
    out[covered] = C[covered] / P[covered]
    return out


def final_count(C: np.ndarray, P: np.ndarray) -> float:
    if C.shape != P.shape:
        raise ValueError(f"count map {C.shape} and coverage {P.shape} differ")
    return float(normalized_map(C, P).sum())


def predict_image(checkpoint, image: np.ndarray, s_e: int | None = None, batch_size: int = 512) -> CountResult:
    """Count a working-resolution H x W x 3 image with a trained checkpoint."""
    meta = checkpoint.metadata
    network = checkpoint.network
    means = checkpoint.means
    h, w = image.shape[:2]
    r = meta.r
    if meta.target_mode == TargetMode.GLOBAL_COUNT.value:
        y = network.forward(stack_batch([resize_array(image, (r, r))], means), mode="infer")
        count = max(float(y.sum(dtype=np.float64)), 0.0)
        # spread uniformly so the map still integrates to the count
        C = np.full((h, w), count / (h * w))
        return CountResult(count, C, np.ones((h, w), dtype=np.int32))
    windows = enumerate_windows(h, w, r, meta.s_e if s_e is None else s_e)
    counts = predict_local_counts(network, image, windows, means, batch_size)
    C, P = merge_counts(windows, counts, h, w)
    return CountResult(final_count(C, P), C, P)


def export_count_map(result: CountResult, stem) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (C/P matrix) and ``<stem>.png`` (8-bit heat image)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    m = result.normalized
    csv_path = stem.with_suffix(".csv")
    with csv_path.open("w") as fh:
        for row in m:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    peak = m.max()
    grey = np.zeros(m.shape, dtype=np.uint8) if peak <= 0 else np.rint(255 * m / peak).astype(np.uint8)
    png_path = stem.with_suffix(".png")
    Image.fromarray(grey).save(png_path)
    return csv_path, png_path
