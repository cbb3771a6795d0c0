from __future__ import annotations

import numpy as np

from .. import nncore
from ..nncore import LayerKind, LayerParams
from .architectures import ArchitectureSpec, build_layers


class Network:
    """Ordered layer stack with a cached train-mode forward for backprop."""

    def __init__(self, spec: ArchitectureSpec, layers: list[LayerParams]):
        self.spec = spec
        self.layers = layers
        self._cache = None

    @classmethod
    def build(cls, spec: ArchitectureSpec, rng: np.random.Generator) -> "Network":
        return cls(spec, build_layers(spec, rng))

    def parameters(self) -> dict[str, np.ndarray]:
        """Learnable arrays keyed ``"<layer index>.<attribute>"``."""
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.trainable().items()}

    def forward(self, x: np.ndarray, mode: str = "train") -> np.ndarray:
        """Run the stack; returns an ``(n, out_dim)`` array."""
        cache = [] if mode == "train" else None
        for layer in self.layers:
            kind = layer.kind
            if kind is LayerKind.CONV3X3:
                y = nncore.conv3x3_forward(x, layer)
                aux = None
            elif kind is LayerKind.BATCHNORM:
                y, aux = nncore.batchnorm_forward(x, layer, mode)
            elif kind is LayerKind.RELU:
                y, aux = nncore.relu_forward(x), None
            elif kind is LayerKind.MAXPOOL2X2:
                y, aux = nncore.maxpool2x2_forward(x)
            elif kind is LayerKind.FULLYCONNECTED:
                y, aux = nncore.fullyconnected_forward(x, layer), None
            else:  # pragma: no cover
                raise ValueError(kind)
            if cache is not None:
                cache.append((x, aux))
            x = y
        self._cache = cache
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        """Backprop ``d loss / d output`` through the last train-mode forward."""
        if self._cache is None:
            raise RuntimeError("backward needs a preceding train-mode forward")
        grads = {}
        g = grad_out.reshape(grad_out.shape[0], -1, 1, 1).astype(np.float32, copy=False)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            x, aux = self._cache[i]
            kind = layer.kind
            if kind is LayerKind.CONV3X3:
                g, gw, gb = nncore.conv3x3_backward(x, layer, g, need_input_grad=i > 0)
                grads[f"{i}.weights"], grads[f"{i}.bias"] = gw, gb
            elif kind is LayerKind.BATCHNORM:
                g, gg, gbeta = nncore.batchnorm_backward(x, layer, aux, g)
                grads[f"{i}.bn_gamma"], grads[f"{i}.bn_beta"] = gg, gbeta
            elif kind is LayerKind.RELU:
                g = nncore.relu_backward(x, g)
            elif kind is LayerKind.MAXPOOL2X2:
                g = nncore.maxpool2x2_backward(aux, g)
            elif kind is LayerKind.FULLYCONNECTED:
                g, gw, gb = nncore.fullyconnected_backward(x, layer, g)
                grads[f"{i}.weights"], grads[f"{i}.bias"] = gw, gb
        self._cache = None
        return grads

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Inference-mode outputs, evaluated in fixed-size chunks."""
        outs = [self.forward(x[i:i + batch_size], mode="infer") for i in range(0, len(x), batch_size)]
        if not outs:
            return np.zeros((0, self.spec.out_dim), dtype=np.float32)
        return np.concatenate(outs)
