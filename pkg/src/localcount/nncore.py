"""Minimal convolutional network engine with hand-written backward passes.

Tensors are plain ``numpy`` arrays laid out as ``(batch, channels, rows, cols)``.
Layers are stateless functions over a :class:`LayerParams` record; the only
mutation is the running-statistics update in batch-norm training mode and the
explicit parameter update in :func:`sgd_step`.

Convolution here is cross-correlation (the usual deep-learning convention).
The heavy inner loops (3x3 correlation, pooling, batch-norm statistics) run
on torch's CPU kernels, called directly forward and backward; no autograd
graph is ever built and every layer's backward is invoked explicitly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import NumericError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class LayerKind(str, enum.Enum):
    CONV3X3 = "conv3x3"
    MAXPOOL2X2 = "maxpool2x2"
    FULLYCONNECTED = "fullyconnected"
    RELU = "relu"
    BATCHNORM = "batchnorm"


@dataclass
class LayerParams:
    kind: LayerKind
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    bn_running_mean: np.ndarray | None = None
    bn_running_var: np.ndarray | None = None
    bn_gamma: np.ndarray | None = None
    bn_beta: np.ndarray | None = None

    @classmethod
    def conv3x3(cls, in_c: int, out_c: int, rng: np.random.Generator) -> "LayerParams":
        return cls(
            LayerKind.CONV3X3,
            weights=he_init((out_c, in_c, 3, 3), rng),
            bias=np.zeros(out_c, dtype=np.float32),
        )

    @classmethod
    def fullyconnected(cls, in_f: int, out_f: int, rng: np.random.Generator) -> "LayerParams":
        return cls(
            LayerKind.FULLYCONNECTED,
            weights=he_init((out_f, in_f), rng),
            bias=np.zeros(out_f, dtype=np.float32),
        )

    @classmethod
    def batchnorm(cls, channels: int) -> "LayerParams":
        # running statistics stay unset until the first training batch
        return cls(
            LayerKind.BATCHNORM,
            bn_gamma=np.ones(channels, dtype=np.float32),
            bn_beta=np.zeros(channels, dtype=np.float32),
        )

    @classmethod
    def relu(cls) -> "LayerParams":
        return cls(LayerKind.RELU)

    @classmethod
    def maxpool2x2(cls) -> "LayerParams":
        return cls(LayerKind.MAXPOOL2X2)

    def trainable(self) -> dict[str, np.ndarray]:
        """Learnable arrays of this layer keyed by attribute name."""
        if self.kind in (LayerKind.CONV3X3, LayerKind.FULLYCONNECTED):
            return {"weights": self.weights, "bias": self.bias}
        if self.kind is LayerKind.BATCHNORM:
            return {"bn_gamma": self.bn_gamma, "bn_beta": self.bn_beta}
        return {}

    def arrays(self) -> dict[str, np.ndarray]:
        """Every populated array, including running statistics."""
        names = ("weights", "bias", "bn_running_mean", "bn_running_var", "bn_gamma", "bn_beta")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}


@dataclass
class BatchStats:
    mean: np.ndarray
    var: np.ndarray
    inv_std: np.ndarray


@dataclass
class OptimizerConfig:
    base_lr: float = 0.01
    decay_epochs: tuple[int, ...] = (5, 15)
    decay_factor: float = 10.0  # lr is divided by this at every decay epoch
    momentum: float = 0.9
    total_epochs: int = 25
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if not self.decay_factor > 0:
            raise ValueError(f"decay_factor must be > 0, got {self.decay_factor}")
        if self.total_epochs < 1:
            raise ValueError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def _check_4d(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-d (n, c, h, w)", ndim=(4, x.ndim))
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension {x.shape}")


def _check_kind(params: LayerParams, kind: LayerKind) -> None:
    if params.kind is not kind:
        raise ValueError(f"expected {kind.value} params, got {params.kind.value}")


def _t(a: np.ndarray) -> torch.Tensor:
    # strides are kept: an NHWC buffer viewed as (n, c, h, w) reaches torch
    # as channels-last, which its CPU convolutions handle fastest
    if any(st < 0 for st in a.strides):
        a = np.ascontiguousarray(a)
    return torch.from_numpy(a)


def _is_channels_last(t: torch.Tensor) -> bool:
    return t.shape[1] > 1 and not t.is_contiguous() and t.is_contiguous(memory_format=torch.channels_last)


# -- convolution --------------------------------------------------------------

def conv3x3_forward(x: np.ndarray, params: LayerParams) -> np.ndarray:
    _check_kind(params, LayerKind.CONV3X3)
    _check_4d(x, "conv3x3 input")
    w = params.weights
    if x.shape[1] != w.shape[1]:
        raise ShapeError("conv3x3 channel mismatch", in_channels=(w.shape[1], x.shape[1]))
    w = w.astype(x.dtype, copy=False)
    b = params.bias.astype(x.dtype, copy=False)
    with torch.no_grad():
        out = F.conv2d(_t(x), _t(w), _t(b), stride=1, padding=1)
    return out.numpy()


def conv3x3_backward(x: np.ndarray, params: LayerParams, grad_out: np.ndarray, need_input_grad: bool = True):
    """Return ``(grad_input, grad_weights, grad_bias)``.

    ``grad_input`` is ``None`` when ``need_input_grad`` is false (first layer).
    """
    _check_kind(params, LayerKind.CONV3X3)
    _check_4d(x, "conv3x3 input")
    w = params.weights
    expected = (x.shape[0], w.shape[0], x.shape[2], x.shape[3])
    if grad_out.shape != expected:
        raise ShapeError("conv3x3 grad_out shape", grad_out=(expected, grad_out.shape))
    w = w.astype(x.dtype, copy=False)
    with torch.no_grad():
        gi, gw, gb = torch.ops.aten.convolution_backward(
            _t(grad_out.astype(x.dtype, copy=False)), _t(x), _t(w), [w.shape[0]],
            [1, 1], [1, 1], [1, 1], False, [0, 0], 1, [need_input_grad, True, True],
        )
    return (gi.numpy() if need_input_grad else None), gw.numpy(), gb.numpy()


# -- max pooling --------------------------------------------------------------

def maxpool2x2_forward(x: np.ndarray):
    """2x2/stride-2 max pooling.

    Returns ``(output, argmax)``; ``argmax`` has the output's shape and holds,
    per output cell, the flat index ``row * w + col`` of the winning input
    within its channel plane. Ties go to the first position in row-major
    order inside the block.
    """
    _check_4d(x, "maxpool input")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError("maxpool2x2 needs even spatial dims", rows=("even", h), cols=("even", w))
    with torch.no_grad():
        out, idx = torch.ops.aten.max_pool2d_with_indices(_t(x), [2, 2], [2, 2])
    return out.numpy(), idx.numpy()


def maxpool2x2_backward(argmax: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if argmax.shape != grad_out.shape:
        raise ShapeError("maxpool2x2 argmax/grad_out mismatch", shape=(argmax.shape, grad_out.shape))
    n, c, h2, w2 = grad_out.shape
    plane = 4 * h2 * w2
    if argmax.size and (argmax.min() < 0 or argmax.max() >= plane):
        raise IndexError(f"maxpool2x2 argmax index outside [0, {plane})")
    g = _t(grad_out)
    with torch.no_grad():
        # the kernel only reads the input's shape, dtype and layout
        fmt = torch.channels_last if _is_channels_last(g) else torch.contiguous_format
        like = torch.empty((n, c, 2 * h2, 2 * w2), dtype=g.dtype, memory_format=fmt)
        gi = torch.ops.aten.max_pool2d_with_indices_backward(
            g, like, [2, 2], [2, 2], [0, 0], [1, 1], False, _t(argmax),
        )
    return gi.numpy()


# -- fully connected ----------------------------------------------------------

def fullyconnected_forward(x: np.ndarray, params: LayerParams) -> np.ndarray:
    _check_kind(params, LayerKind.FULLYCONNECTED)
    _check_4d(x, "fullyconnected input")
    w = params.weights
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[1]:
        raise ShapeError("fullyconnected input features", in_features=(w.shape[1], flat.shape[1]))
    # BLAS picks different kernels for rows at the tail of a batch; accumulating
    # in float64 and rounding once keeps each row independent of its position
    out = flat.astype(np.float64) @ w.T.astype(np.float64) + params.bias.astype(np.float64)
    return out.astype(x.dtype, copy=False).reshape(x.shape[0], w.shape[0], 1, 1)


def fullyconnected_backward(x: np.ndarray, params: LayerParams, grad_out: np.ndarray):
    _check_kind(params, LayerKind.FULLYCONNECTED)
    w = params.weights.astype(x.dtype, copy=False)
    expected = (x.shape[0], w.shape[0], 1, 1)
    if grad_out.shape != expected:
        raise ShapeError("fullyconnected grad_out shape", grad_out=(expected, grad_out.shape))
    flat = x.reshape(x.shape[0], -1)
    g = grad_out.reshape(x.shape[0], -1)
    grad_in = np.empty_like(x)  # keeps the input's memory layout
    grad_in[...] = (g @ w).reshape(x.shape)
    return grad_in, g.T @ flat, g.sum(axis=0)


# -- relu ---------------------------------------------------------------------

def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


# -- batch normalization ------------------------------------------------------

def batchnorm_forward(x: np.ndarray, params: LayerParams, mode: str = "train", update_running: bool = True):
    """Per-channel batch normalization over (n, h, w).

    In ``train`` mode the batch statistics are returned for the backward pass
    and the running statistics move as ``new = 0.9 * old + 0.1 * batch``
    (biased batch variance). In ``infer`` mode the running statistics are
    used and ``None`` is returned in place of the batch statistics.
    """
    _check_kind(params, LayerKind.BATCHNORM)
    _check_4d(x, "batchnorm input")
    c = x.shape[1]
    if c != params.bn_gamma.shape[0]:
        raise ShapeError("batchnorm channel mismatch", channels=(params.bn_gamma.shape[0], c))

    if mode == "infer":
        if params.bn_running_mean is None or params.bn_running_var is None:
            raise ValueError("batchnorm running statistics are uninitialized; train first")
        scale = params.bn_gamma / np.sqrt(params.bn_running_var + np.float32(BN_EPS))
        shift = params.bn_beta - params.bn_running_mean * scale
        out = x * scale.astype(x.dtype)[None, :, None, None] + shift.astype(x.dtype)[None, :, None, None]
        return out, None
    if mode != "train":
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    gamma = params.bn_gamma.astype(x.dtype, copy=False)
    beta = params.bn_beta.astype(x.dtype, copy=False)
    with torch.no_grad():
        out, mean, inv_std = torch.ops.aten.native_batch_norm(
            _t(x), _t(gamma), _t(beta), None, None, True, BN_MOMENTUM, BN_EPS,
        )
    mean, inv_std = mean.numpy(), inv_std.numpy()
    var = 1.0 / np.square(inv_std.astype(np.float64)) - BN_EPS

    if update_running:
        if params.bn_running_mean is None:
            params.bn_running_mean = np.zeros(c, dtype=np.float32)
            params.bn_running_var = np.ones(c, dtype=np.float32)
        m = BN_MOMENTUM
        params.bn_running_mean = ((1 - m) * params.bn_running_mean + m * mean).astype(np.float32)
        params.bn_running_var = ((1 - m) * params.bn_running_var + m * np.maximum(var, 0)).astype(np.float32)
    return out.numpy(), BatchStats(mean, var, inv_std)


def batchnorm_backward(x: np.ndarray, params: LayerParams, stats: BatchStats, grad_out: np.ndarray):
    """Return ``(grad_input, grad_gamma, grad_beta)`` for a train-mode forward."""
    _check_kind(params, LayerKind.BATCHNORM)
    if grad_out.shape != x.shape:
        raise ShapeError("batchnorm grad_out shape", grad_out=(x.shape, grad_out.shape))
    gamma = params.bn_gamma.astype(x.dtype, copy=False)
    with torch.no_grad():
        gi, gg, gb = torch.ops.aten.native_batch_norm_backward(
            _t(grad_out.astype(x.dtype, copy=False)), _t(x), _t(gamma), None, None,
            _t(stats.mean), _t(stats.inv_std), True, BN_EPS, [True, True, True],
        )
    return gi.numpy(), gg.numpy(), gb.numpy()


# -- initialization and optimization -----------------------------------------

def he_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian weights with variance ``2 / fan_in``.

    ``fan_in`` is the product of all dimensions after the first, i.e.
    ``in_c * 3 * 3`` for conv weights and ``in_features`` for dense ones.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or min(shape) < 1:
        raise ValueError(f"he_init needs a nonempty shape, got {shape}")
    fan_in = math.prod(shape[1:]) if len(shape) > 1 else shape[0]
    std = np.float32(math.sqrt(2.0 / fan_in))
    return rng.standard_normal(shape, dtype=np.float32) * std


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float,
             momentum: float, velocity: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """In-place momentum SGD: ``v = momentum * v - lr * g; p = p + v``.

    ``velocity`` is filled lazily with zeros for unseen keys. Every gradient is
    checked for finiteness before anything is modified.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape for {name}", shape=(params[name].shape, g.shape))
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")
    lr32 = np.float32(lr)
    mu32 = np.float32(momentum)
    for name, g in grads.items():
        p = params[name]
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ShapeError(f"velocity shape for {name}", shape=(p.shape, v.shape))
        v *= mu32
        v -= lr32 * g.astype(p.dtype, copy=False)
        p += v
    return params


def lr_at_epoch(config: OptimizerConfig, epoch: int) -> float:
    if not 0 <= epoch < config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs})")
    drops = sum(1 for e in config.decay_epochs if epoch >= e)
    lr = config.base_lr
    for _ in range(drops):
        lr /= config.decay_factor
    return lr
