"""Binary checkpoint format.

Layout, all integers little-endian ``uint32``::

    b"LCNTCKPT" | version | len(meta) | meta (utf-8 key=value lines)
    | n_layers | per layer: kind, n_arrays, per array: name, ndim, dims, float32 data
    | sha256 of everything above (32 bytes)

Strings are a ``uint8`` length followed by utf-8 bytes.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .architectures import ArchitectureSpec
from .network import Network

MAGIC = b"LCNTCKPT"
VERSION = 1
_DIGEST = 32


@dataclass
class TrainingMetadata:
    arch: str = "alexnet_like"
    r: int = 32
    out_dim: int = 1
    sigma: float = 8.0
    s_r: int = 8
    s_e: int = 8
    resize_factor: float = 0.125
    target_mode: str = "local_count"
    loss: str = "l1"
    delta: float = 1.0
    channel_means: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    epochs_completed: int = 0
    base_lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 256

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "channel_means":
                v = " ".join(repr(float(m)) for m in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingMetadata":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key not in types:
                raise CheckpointError(f"unknown metadata key {key!r}")
            default = getattr(cls(), key)
            if key == "channel_means":
                kw[key] = tuple(float(x) for x in value.split())
            elif isinstance(default, bool):
                kw[key] = value == "True"
            elif isinstance(default, int):
                kw[key] = int(value)
            elif isinstance(default, float):
                kw[key] = float(value)
            else:
                kw[key] = value
        return cls(**kw)


@dataclass
class ModelCheckpoint:
    network: Network
    metadata: TrainingMetadata

    @property
    def means(self) -> np.ndarray:
        return np.asarray(self.metadata.channel_means, dtype=np.float64)


def _put_str(buf, s: str):
    b = s.encode()
    buf.write(struct.pack("<B", len(b)))
    buf.write(b)


def _get_str(buf) -> str:
    (n,) = struct.unpack("<B", _read(buf, 1))
    return _read(buf, n).decode()


def _read(buf, n: int) -> bytes:
    b = buf.read(n)
    if len(b) != n:
        raise CheckpointError("checkpoint truncated")
    return b


def encode_checkpoint(network: Network, metadata: TrainingMetadata) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta = metadata.to_text().encode()
    buf.write(struct.pack("<II", VERSION, len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(network.layers)))
    for layer in network.layers:
        _put_str(buf, layer.kind.value)
        arrays = layer.arrays()
        buf.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            _put_str(buf, name)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes) -> ModelCheckpoint:
    if len(blob) < len(MAGIC) + 8 + _DIGEST:
        raise CheckpointError("checkpoint truncated")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum failure: file is corrupt or truncated")
    buf = io.BytesIO(body)
    buf.seek(len(MAGIC))
    version, meta_len = struct.unpack("<II", _read(buf, 8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    meta = TrainingMetadata.from_text(_read(buf, meta_len).decode())
    spec = ArchitectureSpec.named(meta.arch, meta.r, meta.out_dim)
    network = Network.build(spec, np.random.default_rng(0))
    (n_layers,) = struct.unpack("<I", _read(buf, 4))
    if n_layers != len(network.layers):
        raise CheckpointError(f"{meta.arch} has {len(network.layers)} layers, checkpoint has {n_layers}")
    for layer in network.layers:
        kind = _get_str(buf)
        if kind != layer.kind.value:
            raise CheckpointError(f"layer kind {kind!r} where {layer.kind.value!r} was expected")
        (n_arrays,) = struct.unpack("<I", _read(buf, 4))
        for _ in range(n_arrays):
            name = _get_str(buf)
            (ndim,) = struct.unpack("<I", _read(buf, 4))
            shape = struct.unpack(f"<{ndim}I", _read(buf, 4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read(buf, 4 * count), dtype="<f4").astype(np.float32).reshape(shape)
            if not hasattr(layer, name):
                raise CheckpointError(f"unknown array {name!r}")
            current = getattr(layer, name)
            if current is not None and current.shape != data.shape:
                raise CheckpointError(f"array {name} has shape {data.shape}, expected {current.shape}")
            setattr(layer, name, data)
    if buf.read(1):
        raise CheckpointError("trailing bytes after layer data")
    return ModelCheckpoint(network, meta)


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(network: Network, metadata: TrainingMetadata, path) -> None:
    atomic_write(path, encode_checkpoint(network, metadata))


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
