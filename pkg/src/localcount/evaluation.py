"""Per-sequence and overall MAE/MSE over a manifest's test split.

Ground truth for each image is the integral of its density map, not the raw
number of dots, so objects near the border count fractionally. ``mse`` is
the root of the mean squared error.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data.manifest import DatasetManifest, Split
from .data.patches import prepare_image, SamplingConfig
from .density import render_density, total_count
from .errors import DataError
from .infer import predict_image


def _pair(truths, preds):
    t = np.asarray(truths, dtype=np.float64).ravel()
    c = np.asarray(preds, dtype=np.float64).ravel()
    if t.shape != c.shape:
        raise ValueError(f"{t.size} truths vs {c.size} predictions")
    if t.size == 0:
        raise ValueError("no values to evaluate")
    return t, c


def mae(truths, preds) -> float:
    t, c = _pair(truths, preds)
    return float(np.mean(np.abs(t - c)))


def mse(truths, preds) -> float:
    t, c = _pair(truths, preds)
    return float(math.sqrt(np.mean(np.square(t - c))))


@dataclass
class EvalRow:
    sequence: str
    n: int
    mae: float
    mse: float


@dataclass
class ImageResult:
    record_id: str
    sequence: str
    truth: float
    pred: float


@dataclass
class EvalResult:
    rows: list[EvalRow]
    overall: EvalRow
    images: list[ImageResult] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["sequence", "n", "mae", "mse"])
        for row in [*self.rows, self.overall]:
            w.writerow([row.sequence, row.n, repr(row.mae), repr(row.mse)])
        return out.getvalue()

    def to_table(self) -> str:
        width = max(len("sequence"), *(len(r.sequence) for r in self.rows), len("overall"))
        lines = [f"{'sequence':<{width}}  {'n':>4}  {'MAE':>7}  {'MSE':>7}"]
        for row in [*self.rows, self.overall]:
            lines.append(f"{row.sequence:<{width}}  {row.n:>4}  {row.mae:>7.1f}  {row.mse:>7.1f}")
        return "\n".join(lines) + "\n"


def summarize(images: list[ImageResult]) -> EvalResult:
    """Group image results by sequence (first-appearance order) and pool them."""
    if not images:
        raise ValueError("no test images")
    groups: dict[str, list[ImageResult]] = {}
    for im in images:
        groups.setdefault(im.sequence, []).append(im)
    rows = []
    for seq, items in groups.items():
        t = [i.truth for i in items]
        c = [i.pred for i in items]
        rows.append(EvalRow(seq, len(items), mae(t, c), mse(t, c)))
    t = [i.truth for i in images]
    c = [i.pred for i in images]
    return EvalResult(rows, EvalRow("overall", len(images), mae(t, c), mse(t, c)), list(images))


def evaluate(checkpoint, manifest: DatasetManifest, resize_factor: float | None = None,
             sigma: float | None = None, s_e: int | None = None,
             predictor: Callable[[np.ndarray], float] | None = None) -> EvalResult:
    """Evaluate over ``manifest``'s test records.

    Preprocessing follows the checkpoint metadata unless overridden.
    ``predictor`` replaces the network (e.g. an oracle) when given.
    """
    meta = checkpoint.metadata if checkpoint is not None else None
    if resize_factor is None:
        resize_factor = meta.resize_factor if meta is not None else 1.0
    if sigma is None:
        sigma = meta.sigma if meta is not None else 8.0
    if predictor is None:
        if checkpoint is None:
            raise ValueError("need a checkpoint or a predictor")

        def predictor(img):
            return predict_image(checkpoint, img, s_e=s_e).count

    records = manifest.by_split(Split.TEST)
    if not records:
        raise DataError("manifest has no test records", manifest.path)
    cfg = SamplingConfig(r=8, sigma=sigma, resize_factor=resize_factor)
    results = []
    for rec in records:
        image, dots = prepare_image(rec, cfg)
        truth = total_count(render_density(dots, image.shape[0], image.shape[1], sigma))
        results.append(ImageResult(rec.record_id, rec.sequence_name, truth, float(predictor(image))))
    return summarize(results)
