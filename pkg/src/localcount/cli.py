"""``localcount`` command-line interface.

Commands: ``synth``, ``train``, ``predict``, ``evaluate`` and ``sweep``.
Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

Settings are layered: built-in defaults, then ``config.txt`` beside the
manifest (if any), then ``--config``, then explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, load_config_file, resolve_config
from .data import (
    SamplingConfig, Split, SynthConfig, TargetMode, extract_training_patches, load_image, load_manifest,
    prepare_image, resize_image, shuffle_split, synth_generate, to_array,
)
from .density import render_density, total_count
from .errors import CheckpointError, DataError, NumericError
from .evaluation import EvalResult, evaluate
from .infer import CountResult, export_count_map, predict_image
from .model import (
    LOSSES, PLANS, ArchitectureSpec, ModelCheckpoint, Network, TrainingMetadata, TrainReport, load_checkpoint,
    save_checkpoint, train, train_global_regressor,
)
from .model.checkpoint import atomic_write
from .nncore import OptimizerConfig

log = logging.getLogger("localcount")

# flag name -> RunConfig key
FLAG_KEYS = {
    "patch-size": "r",
    "train-stride": "s_r",
    "eval-stride": "s_e",
    "sigma": "sigma",
    "resize-factor": "resize_factor",
    "target-mode": "target_mode",
    "arch": "arch",
    "loss": "loss",
    "delta": "delta",
    "epochs": "epochs",
    "base-lr": "base_lr",
    "momentum": "momentum",
    "batch-size": "batch_size",
    "train-fraction": "train_fraction",
    "seed": "seed",
    "threads": "threads",
}


class UsageError(Exception):
    pass


@dataclass
class TrainOutputs:
    checkpoint: ModelCheckpoint
    report: TrainReport
    out_dir: Path


# -- pipeline ---------------------------------------------------------------

def dataset_config(manifest_path) -> dict[str, str]:
    """Settings shipped with a dataset (``config.txt`` next to the manifest)."""
    path = Path(manifest_path).parent / "config.txt"
    return load_config_file(path) if path.is_file() else {}


def effective_config(manifest_path=None, config_path=None, overrides: dict | None = None) -> RunConfig:
    layers = []
    if manifest_path is not None:
        layers.append(dataset_config(manifest_path))
    if config_path is not None:
        layers.append(load_config_file(config_path))
    layers.append(overrides or {})
    return resolve_config(*layers)


def sampling_config(cfg: RunConfig) -> SamplingConfig:
    return SamplingConfig(r=cfg.r, s_r=cfg.s_r, s_e=cfg.s_e, sigma=cfg.sigma,
                          resize_factor=cfg.resize_factor, target_mode=cfg.target_mode)


def optimizer_config(cfg: RunConfig) -> OptimizerConfig:
    return OptimizerConfig(base_lr=cfg.base_lr, momentum=cfg.momentum, total_epochs=cfg.epochs,
                           batch_size=cfg.batch_size, seed=cfg.seed)


def _metadata(cfg: RunConfig) -> TrainingMetadata:
    return TrainingMetadata(arch=cfg.arch, r=cfg.r, sigma=cfg.sigma, s_r=cfg.s_r, s_e=cfg.s_e,
                            resize_factor=cfg.resize_factor, target_mode=cfg.target_mode)


def cmd_train(cfg: RunConfig, manifest_path, out_dir) -> TrainOutputs:
    """Train on the manifest's train and val records and write the run directory.

    Writes ``run.log`` (effective configuration, then one line per epoch),
    ``report.csv`` and ``model.ckpt``. The checkpoint is written last and
    atomically, so a failed run never leaves one behind.
    """
    if cfg.loss not in LOSSES:
        raise UsageError(f"unknown loss {cfg.loss!r}; valid: {', '.join(LOSSES)}")
    if cfg.arch not in PLANS:
        raise UsageError(f"unknown architecture {cfg.arch!r}; valid: {', '.join(PLANS)}")
    sampling = sampling_config(cfg)
    opt = optimizer_config(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(manifest_path)
    records = manifest.by_split(Split.TRAIN, Split.VAL)
    if not records:
        raise DataError("manifest has no train or val records", manifest_path)

    run_log = out_dir / "run.log"
    run_log.write_text(f"manifest={Path(manifest_path)}\n" + cfg.to_text())

    def on_epoch(rec):
        with run_log.open("a") as fh:
            fh.write(f"epoch={rec.epoch} lr={rec.lr!r} train_loss={rec.train_loss!r} val_mae={rec.val_mae!r}\n")

    mode = sampling.target_mode
    images, counts, samples = [], [], []
    for rec in records:
        image, dots = prepare_image(rec, sampling)
        density = render_density(dots, image.shape[0], image.shape[1], sampling.sigma)
        if mode is TargetMode.GLOBAL_COUNT:
            images.append(image)
            counts.append(total_count(density))
        else:
            samples.extend(extract_training_patches(image, density, sampling, rec.record_id))
    log.info("%d images, %d training samples", len(records), len(samples) or len(images))

    meta = _metadata(cfg)
    if mode is TargetMode.GLOBAL_COUNT:
        checkpoint, report = train_global_regressor(
            images, counts, opt, cfg.arch, cfg.r, cfg.loss, cfg.delta, cfg.train_fraction, meta)
    else:
        if not samples:
            raise DataError(f"no {cfg.r}x{cfg.r} patches could be extracted", manifest_path)
        train_set, val_set = shuffle_split(samples, cfg.train_fraction, cfg.seed)
        out_dim = cfg.r * cfg.r if mode is TargetMode.LOCAL_DENSITY else 1
        network = Network.build(ArchitectureSpec.named(cfg.arch, cfg.r, out_dim), np.random.default_rng(cfg.seed))
        checkpoint, report = train(network, train_set, val_set, opt, cfg.loss, cfg.delta, meta, on_epoch)
    if mode is TargetMode.GLOBAL_COUNT:
        for rec in report.epochs:
            on_epoch(rec)

    atomic_write(out_dir / "report.csv", report.to_csv().encode())
    save_checkpoint(checkpoint.network, checkpoint.metadata, out_dir / "model.ckpt")
    return TrainOutputs(checkpoint, report, out_dir)


def cmd_synth(cfg: SynthConfig, seed: int, out_dir):
    summary = synth_generate(cfg, seed, out_dir)
    n = len(summary.counts)
    splits = ", ".join(f"{k}={v}" for k, v in summary.splits.items() if v)
    print(f"images: {n}")
    print(f"objects: {summary.total_objects} (mean {summary.total_objects / n:.1f} per image)")
    print(f"splits: {splits}")
    print(f"manifest: {Path(out_dir) / 'manifest.csv'}")
    return summary


def _check_patch_size(checkpoint: ModelCheckpoint, patch_size: int | None):
    if patch_size is not None and patch_size != checkpoint.metadata.r:
        raise UsageError(f"--patch-size {patch_size} does not match the checkpoint (r={checkpoint.metadata.r})")


def cmd_predict(checkpoint_path, image_path, out_stem=None, resize_factor: float | None = None,
                s_e: int | None = None, patch_size: int | None = None) -> CountResult:
    """Count one image; prints the unrounded count and writes the count map."""
    checkpoint = load_checkpoint(checkpoint_path)
    _check_patch_size(checkpoint, patch_size)
    factor = checkpoint.metadata.resize_factor if resize_factor is None else resize_factor
    image = to_array(resize_image(load_image(image_path), factor))
    result = predict_image(checkpoint, image, s_e=s_e)
    if out_stem is not None:
        export_count_map(result, out_stem)
    print(repr(result.count))
    return result


def cmd_evaluate(checkpoint_path, manifest_path, out_dir, resize_factor: float | None = None,
                 s_e: int | None = None, patch_size: int | None = None) -> EvalResult:
    """Evaluate on the manifest's test split; writes ``eval.csv`` and ``eval.txt``."""
    checkpoint = load_checkpoint(checkpoint_path)
    _check_patch_size(checkpoint, patch_size)
    manifest = load_manifest(manifest_path)
    result = evaluate(checkpoint, manifest, resize_factor=resize_factor, s_e=s_e)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(out_dir / "eval.csv", result.to_csv().encode())
    atomic_write(out_dir / "eval.txt", result.to_table().encode())
    sys.stdout.write(result.to_table())
    print(f"overall MAE {result.overall.mae:.4f} MSE {result.overall.mse:.4f}")
    return result


def cmd_sweep(cfg: RunConfig, manifest_path, out_dir, param: str, values: list[str]):
    """Train (and evaluate, if there are test records) once per value of ``param``.

    Each cell gets its own directory ``<out>/<key>=<value>``; ``sweep.csv``
    collects one row per cell.
    """
    key = FLAG_KEYS.get(param, param)
    if key not in RunConfig.__dataclass_fields__:
        raise UsageError(f"unknown sweep parameter {param!r}")
    out_dir = Path(out_dir)
    has_test = bool(load_manifest(manifest_path).by_split(Split.TEST))
    rows = []
    for value in values:
        try:
            cell_cfg = cfg.updated({key: value})
        except ValueError as exc:
            raise UsageError(f"bad value {value!r} for {key}: {exc}") from exc
        cell_dir = out_dir / f"{key}={value}"
        log.info("sweep cell %s=%s", key, value)
        outputs = cmd_train(cell_cfg, manifest_path, cell_dir)
        final = outputs.report.epochs[-1]
        row = [key, value, repr(final.train_loss), repr(final.val_mae), "", ""]
        if has_test:
            res = cmd_evaluate(cell_dir / "model.ckpt", manifest_path, cell_dir)
            row[4:] = [repr(res.overall.mae), repr(res.overall.mse)]
        rows.append(row)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "train_loss", "val_mae", "test_mae", "test_mse"])
    w.writerows(rows)
    atomic_write(out_dir / "sweep.csv", buf.getvalue().encode())
    return rows


# -- argument parsing ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", type=Path, help="key=value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--threads", type=int, help="torch intra-op threads (default: torch's choice)")
    return p


def _training_flags(p: argparse.ArgumentParser):
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--patch-size", type=int, help="patch side r (default 32)")
    p.add_argument("--train-stride", type=int, help="training lattice stride s_r (default 8)")
    p.add_argument("--eval-stride", type=int, help="inference stride s_e (default 8)")
    p.add_argument("--sigma", type=float, help="Gaussian sigma in working pixels (default 8)")
    p.add_argument("--resize-factor", type=float)
    p.add_argument("--target-mode", choices=[m.value for m in TargetMode])
    p.add_argument("--arch", choices=list(PLANS))
    p.add_argument("--loss", choices=list(LOSSES))
    p.add_argument("--delta", type=float, help="Huber threshold")
    p.add_argument("--epochs", type=int)
    p.add_argument("--base-lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--train-fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="localcount", description="Object counting by local-count regression.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _global_flags()

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--images", type=int, default=250)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=320)

    p = sub.add_parser("train", parents=[common], help="train a local-count model")
    _training_flags(p)

    p = sub.add_parser("predict", parents=[common], help="count objects in one image")
    p.add_argument("image", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--patch-size", type=int, help="must match the checkpoint if given")
    p.add_argument("--eval-stride", type=int)
    p.add_argument("--resize-factor", type=float)

    p = sub.add_parser("evaluate", parents=[common], help="MAE/MSE over a manifest's test split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--patch-size", type=int, help="must match the checkpoint if given")
    p.add_argument("--eval-stride", type=int)
    p.add_argument("--resize-factor", type=float)

    p = sub.add_parser("sweep", parents=[common], help="train once per value of one setting")
    _training_flags(p)
    p.add_argument("--param", required=True, help="setting to vary, e.g. loss or patch-size")
    p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def _overrides(args) -> dict:
    out = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag.replace("-", "_"), None)
        if value is not None:
            out[key] = value
    return out


def _require_out(args, command: str) -> Path:
    if args.out is None:
        raise UsageError(f"localcount {command}: --out is required")
    return args.out


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        torch.set_num_threads(args.threads)

    if args.command == "synth":
        out = _require_out(args, "synth")
        try:
            cfg = SynthConfig(n_images=args.images, test_fraction=args.test_fraction,
                              height=args.height, width=args.width)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        cmd_synth(cfg, args.seed or 0, out)
    elif args.command in ("train", "sweep"):
        out = _require_out(args, args.command)
        try:
            cfg = effective_config(args.manifest, args.config, _overrides(args))
            sampling_config(cfg)
            optimizer_config(cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if cfg.threads and not args.threads:
            torch.set_num_threads(cfg.threads)
        if args.command == "train":
            outputs = cmd_train(cfg, args.manifest, out)
            final = outputs.report.epochs[-1]
            print(f"trained {cfg.arch} for {cfg.epochs} epochs; final train loss {final.train_loss:.5f}, "
                  f"val MAE {final.val_mae:.5f}")
            print(f"checkpoint: {out / 'model.ckpt'}")
        else:
            cmd_sweep(cfg, args.manifest, out, args.param, [v.strip() for v in args.values.split(",") if v.strip()])
    elif args.command == "predict":
        stem = None if args.out is None else args.out / f"{args.image.stem}_countmap"
        cmd_predict(args.checkpoint, args.image, stem, args.resize_factor, args.eval_stride, args.patch_size)
    elif args.command == "evaluate":
        out = _require_out(args, "evaluate")
        cmd_evaluate(args.checkpoint, args.manifest, out, args.resize_factor, args.eval_stride, args.patch_size)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return run(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        # invalid settings that only surface once the pipeline starts
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
