from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..data.patches import (
    PatchSample, TargetMode, compute_channel_mean, resize_array, shuffle_split, stack_batch, stack_targets,
)
from ..errors import NumericError
from ..nncore import OptimizerConfig, lr_at_epoch, sgd_step
from .architectures import ArchitectureSpec
from .checkpoint import ModelCheckpoint, TrainingMetadata
from .losses import get_loss
from .network import Network

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_mae: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "val_mae"])
        for e in self.epochs:
            w.writerow([e.epoch, repr(e.lr), repr(e.train_loss), repr(e.val_mae)])
        return out.getvalue()


def _val_mae(network: Network, pixels, targets: np.ndarray, means, batch_size: int = 512) -> float:
    if not pixels:
        return math.nan
    err = 0.0
    for i in range(0, len(pixels), batch_size):
        out = network.forward(stack_batch(pixels[i:i + batch_size], means), mode="infer")
        # a local-density output is compared through its integral
        pred = out.sum(axis=1, dtype=np.float64)
        truth = targets[i:i + batch_size].sum(axis=1, dtype=np.float64)
        err += float(np.abs(pred - truth).sum())
    return err / len(pixels)


def train(network: Network, train_samples: Sequence[PatchSample], val_samples: Sequence[PatchSample],
          config: OptimizerConfig, loss: str = "l1", delta: float = 1.0,
          metadata: TrainingMetadata | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None):
    """Mini-batch SGD over ``config.total_epochs`` epochs.

    The channel mean is computed from ``train_samples`` and stored in the
    returned checkpoint's metadata. The final-epoch weights are returned
    (no best-validation selection). Returns ``(ModelCheckpoint, TrainReport)``.
    """
    if not train_samples:
        raise ValueError("training set is empty")
    r = network.spec.r
    if train_samples[0].pixels.shape[:2] != (r, r):
        raise ValueError(f"samples are {train_samples[0].pixels.shape[:2]}, network expects {r}x{r}")
    loss_fn = get_loss(loss, delta)
    means = compute_channel_mean(train_samples)
    pixels = [s.pixels for s in train_samples]
    targets = stack_targets(train_samples)
    if targets.shape[1] != network.spec.out_dim:
        raise ValueError(f"targets have width {targets.shape[1]}, network outputs {network.spec.out_dim}")
    val_pixels = [s.pixels for s in val_samples]
    val_targets = stack_targets(val_samples) if val_samples else np.zeros((0, 1), np.float32)

    params = network.parameters()
    velocity: dict[str, np.ndarray] = {}
    report = TrainReport()
    n = len(pixels)
    bs = config.batch_size
    for epoch in range(config.total_epochs):
        lr = lr_at_epoch(config, epoch)
        perm = np.random.default_rng([config.seed, epoch]).permutation(n)
        total, batches = 0.0, 0
        for b, start in enumerate(range(0, n, bs)):
            idx = perm[start:start + bs]
            x = stack_batch([pixels[i] for i in idx], means)
            out = network.forward(x, mode="train")
            value, grad = loss_fn(out, targets[idx])
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = network.backward(grad)
            try:
                sgd_step(params, grads, lr, config.momentum, velocity)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            total += value
            batches += 1
        rec = EpochRecord(epoch, lr, total / batches, _val_mae(network, val_pixels, val_targets, means))
        report.epochs.append(rec)
        log.info("epoch %d lr %g train_loss %.5f val_mae %.5f", epoch, lr, rec.train_loss, rec.val_mae)
        if on_epoch is not None:
            on_epoch(rec)

    meta = replace(metadata) if metadata is not None else TrainingMetadata()
    meta.arch = network.spec.name
    meta.r = r
    meta.out_dim = network.spec.out_dim
    meta.loss = loss
    meta.delta = float(delta)
    meta.channel_means = tuple(float(m) for m in means)
    meta.seed = config.seed
    meta.epochs_completed = config.total_epochs
    meta.base_lr = config.base_lr
    meta.momentum = config.momentum
    meta.batch_size = config.batch_size
    return ModelCheckpoint(network, meta), report


def global_samples(images: Sequence[np.ndarray], counts: Sequence[float], r: int) -> list[PatchSample]:
    """Whole images squeezed to ``r x r``, each targeting its total count."""
    return [PatchSample(resize_array(img, (r, r)), float(c), (i,)) for i, (img, c) in enumerate(zip(images, counts))]


def train_global_regressor(images: Sequence[np.ndarray], counts: Sequence[float], config: OptimizerConfig,
                           arch: str = "alexnet_like", r: int = 32, loss: str = "l1", delta: float = 1.0,
                           train_fraction: float = 0.9, metadata: TrainingMetadata | None = None):
    """Global-count comparator: the same network regressing whole-image counts.

    Returns ``(ModelCheckpoint, TrainReport)`` with ``target_mode`` set to
    ``global_count`` in the metadata.
    """
    if len(images) != len(counts):
        raise ValueError("images and counts differ in length")
    samples = global_samples(images, counts, r)
    if len(samples) > 1:
        train_set, val_set = shuffle_split(samples, train_fraction, config.seed)
    else:
        train_set, val_set = samples, []
    network = Network.build(ArchitectureSpec.named(arch, r), np.random.default_rng(config.seed))
    meta = replace(metadata) if metadata is not None else TrainingMetadata()
    meta.target_mode = TargetMode.GLOBAL_COUNT.value
    return train(network, train_set, val_set, config, loss, delta, meta)
