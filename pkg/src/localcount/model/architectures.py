"""The three network plans and network assembly.

Every plan uses 3x3/pad-1 convolutions, each followed by batch norm and ReLU,
2x2 max pooling, channel doubling after every pool, and two dense layers at
the end (the last one linear). Parameter counts at ``r = 32`` with an output
width of 1:

==============  ==========================================  ==========
plan            layers                                      parameters
==============  ==========================================  ==========
lenet_like      c16 p c32 p fc64 fc1                        136,385
alexnet_like    c16 c16 p c32 c32 p fc128 fc1               279,249
vgg16_like      c16x2 p c32x2 p c64x3 p c128x3 p c256x3 p   2,022,289
                fc256 fc1
==============  ==========================================  ==========

alexnet_like in detail (weights + bias, then gamma + beta for batch norm)::

    conv 3->16     432 + 16 =    448   bn16    32
    conv 16->16   2304 + 16 =   2320   bn16    32
    conv 16->32   4608 + 32 =   4640   bn32    64
    conv 32->32   9216 + 32 =   9248   bn32    64
    fc 2048->128  262144 + 128 = 262272
    fc 128->1     128 + 1 =        129
    total                        279249
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nncore import LayerParams

PLANS: dict[str, tuple] = {
    "lenet_like": (("conv", 16), ("pool",), ("conv", 32), ("pool",), ("fc", 64)),
    "alexnet_like": (
        ("conv", 16), ("conv", 16), ("pool",),
        ("conv", 32), ("conv", 32), ("pool",),
        ("fc", 128),
    ),
    "vgg16_like": (
        ("conv", 16), ("conv", 16), ("pool",),
        ("conv", 32), ("conv", 32), ("pool",),
        ("conv", 64), ("conv", 64), ("conv", 64), ("pool",),
        ("conv", 128), ("conv", 128), ("conv", 128), ("pool",),
        ("conv", 256), ("conv", 256), ("conv", 256), ("pool",),
        ("fc", 256),
    ),
}

# magnitudes the plans are sized against
REFERENCE_PARAMS = {"lenet_like": 1.4e5, "alexnet_like": 2.5e5, "vgg16_like": 2.4e6}


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    stages: tuple
    r: int = 32
    in_channels: int = 3
    out_dim: int = 1

    @classmethod
    def named(cls, name: str, r: int = 32, out_dim: int = 1) -> "ArchitectureSpec":
        if name not in PLANS:
            raise ValueError(f"unknown architecture {name!r}; choose from {', '.join(PLANS)}")
        return cls(name, PLANS[name], int(r), 3, int(out_dim))

    @property
    def n_pools(self) -> int:
        return sum(1 for s in self.stages if s[0] == "pool")


def build_layers(spec: ArchitectureSpec, rng: np.random.Generator) -> list[LayerParams]:
    factor = 2 ** spec.n_pools
    if spec.r % factor:
        raise ValueError(f"{spec.name} pools {spec.n_pools} times; r={spec.r} is not divisible by {factor}")
    layers = []
    channels, side = spec.in_channels, spec.r
    features = None
    for stage in spec.stages:
        kind = stage[0]
        if kind == "conv":
            out_c = stage[1]
            layers += [LayerParams.conv3x3(channels, out_c, rng), LayerParams.batchnorm(out_c), LayerParams.relu()]
            channels = out_c
        elif kind == "pool":
            layers.append(LayerParams.maxpool2x2())
            side //= 2
        elif kind == "fc":
            in_f = features if features is not None else channels * side * side
            layers += [LayerParams.fullyconnected(in_f, stage[1], rng), LayerParams.relu()]
            features = stage[1]
        else:
            raise ValueError(f"unknown stage {stage!r}")
    in_f = features if features is not None else channels * side * side
    layers.append(LayerParams.fullyconnected(in_f, spec.out_dim, rng))
    return layers


def count_params(layers) -> int:
    """Weights, biases, gammas and betas; running statistics excluded."""
    if hasattr(layers, "layers"):
        layers = layers.layers
    return int(sum(a.size for layer in layers for a in layer.trainable().values()))


def conv_channel_plan(spec: ArchitectureSpec) -> list[list[int]]:
    """Conv widths grouped by pooling stage, e.g. ``[[16, 16], [32, 32]]``."""
    groups, cur = [], []
    for stage in spec.stages:
        if stage[0] == "conv":
            cur.append(stage[1])
        elif stage[0] == "pool":
            groups.append(cur)
            cur = []
    if cur:
        groups.append(cur)
    return groups

