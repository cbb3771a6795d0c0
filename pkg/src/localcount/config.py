"""Run configuration: defaults, then ``key=value`` files, then command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import DataError


@dataclass
class RunConfig:
    # sampling
    r: int = 32
    s_r: int = 8
    s_e: int = 8
    sigma: float = 8.0
    resize_factor: float = 0.125
    target_mode: str = "local_count"
    # model and loss
    arch: str = "alexnet_like"
    loss: str = "l1"
    delta: float = 1.0
    # optimisation
    epochs: int = 25
    base_lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 256
    train_fraction: float = 0.9
    seed: int = 0
    threads: int = 0  # 0 leaves the torch default

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def updated(self, values: dict) -> "RunConfig":
        """A copy with ``values`` applied; keys and types are checked."""
        types = {f.name: type(getattr(self, f.name)) for f in fields(self)}
        kw = {}
        for key, raw in values.items():
            if key not in types:
                raise KeyError(key)
            if raw is None:
                continue
            kw[key] = types[key](raw)
        return dataclasses.replace(self, **kw)


def parse_config_text(text: str, path=None) -> dict[str, str]:
    """Parse ``key=value`` lines. ``#`` starts a comment; blank lines are skipped."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise DataError(f"expected key=value, got {line!r}", path, lineno)
        if key not in known:
            raise DataError(f"unknown config key {key!r}", path, lineno)
        out[key] = value
    return out


def load_config_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read config: {exc.strerror}", path) from exc
    return parse_config_text(text, path)


def resolve_config(*layers: dict, base: RunConfig | None = None) -> RunConfig:
    """Apply ``layers`` in order over ``base``; later layers win."""
    cfg = base or RunConfig()
    for layer in layers:
        try:
            cfg = cfg.updated(layer)
        except ValueError as exc:
            raise ValueError(f"bad config value: {exc}") from exc
    return cfg
