"""Independent reference implementations used by the tests.

Everything here is deliberately slow and literal: nested loops and central
finite differences, with no shared code from the package's hot paths.
"""

from __future__ import annotations

import numpy as np

from localcount import nncore
from localcount.model.losses import get_loss
from localcount.nncore import LayerParams

FD_STEP = 1e-3
FD_RTOL = 1e-3


def numeric_grad(f, x: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def rel_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


# -- reference layers ---------------------------------------------------------

def conv3x3_naive(x, w, b):
    n, c, h, wd = x.shape
    o = w.shape[0]
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=np.float64)
    xp[:, :, 1:-1, 1:-1] = x
    out = np.zeros((n, o, h, wd), dtype=np.float64)
    for bi in range(n):
        for oc in range(o):
            for i in range(h):
                for j in range(wd):
                    out[bi, oc, i, j] = b[oc] + np.sum(w[oc] * xp[bi, :, i:i + 3, j:j + 3])
    return out


def maxpool_naive(x):
    """Returns ``(out, argmax)``; the first maximum in row-major order wins."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    arg = np.zeros((n, c, h // 2, w // 2), dtype=np.int64)
    for bi in range(n):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    best, where = None, None
                    for di in range(2):
                        for dj in range(2):
                            v = x[bi, ch, 2 * i + di, 2 * j + dj]
                            if best is None or v > best:
                                best, where = v, (2 * i + di) * w + 2 * j + dj
                    out[bi, ch, i, j] = best
                    arg[bi, ch, i, j] = where
    return out, arg


def batchnorm_naive(x, gamma, beta, eps=nncore.BN_EPS):
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    return gamma[None, :, None, None] * (x - mean) / np.sqrt(var + eps) + beta[None, :, None, None]


# -- finite-difference checks, one per layer and loss ---------------------------
# Each returns the worst relative error over every gradient the layer produces.

def _distinct(rng, shape, spread=1.0):
    """Values at least ``spread * 0.02`` apart so kinks (ties, zeros) stay out of FD range."""
    n = int(np.prod(shape))
    vals = ((rng.permutation(n) - n // 2) * 0.02 + 0.005 + rng.uniform(0, 0.004, size=n)) * spread
    return vals.reshape(shape).astype(np.float64)


def check_conv(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, c, o, h, w = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(3, 6)), int(rng.integers(3, 6))
    x = rng.standard_normal((n, c, h, w))
    p = LayerParams(nncore.LayerKind.CONV3X3, weights=rng.standard_normal((o, c, 3, 3)), bias=rng.standard_normal(o))
    r = rng.standard_normal((n, o, h, w))

    def f():
        return float(np.sum(r * nncore.conv3x3_forward(x, p)))

    gi, gw, gb = nncore.conv3x3_backward(x, p, r)
    return max(rel_error(gi, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, p.weights)),
               rel_error(gb, numeric_grad(f, p.bias)))


def check_maxpool(seed: int) -> float:
    rng = np.random.default_rng(seed)
    shape = (2, int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4)))
    x = _distinct(rng, shape)
    out, arg = nncore.maxpool2x2_forward(x)
    r = rng.standard_normal(out.shape)

    def f():
        return float(np.sum(r * nncore.maxpool2x2_forward(x)[0]))

    return rel_error(nncore.maxpool2x2_backward(arg, r), numeric_grad(f, x))


def check_fc(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, c, h, w, o = 3, int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
    x = rng.standard_normal((n, c, h, w))
    p = LayerParams(nncore.LayerKind.FULLYCONNECTED, weights=rng.standard_normal((o, c * h * w)),
                    bias=rng.standard_normal(o))
    r = rng.standard_normal((n, o, 1, 1))

    def f():
        return float(np.sum(r * nncore.fullyconnected_forward(x, p)))

    gi, gw, gb = nncore.fullyconnected_backward(x, p, r)
    return max(rel_error(gi, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, p.weights)),
               rel_error(gb, numeric_grad(f, p.bias)))


def check_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _distinct(rng, (2, 3, 3, 4))
    r = rng.standard_normal(x.shape)

    def f():
        return float(np.sum(r * nncore.relu_forward(x)))

    return rel_error(nncore.relu_backward(x, r), numeric_grad(f, x))


def check_batchnorm(seed: int) -> float:
    # a plain sum would make every input gradient zero; weight the outputs instead
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 4)), int(rng.integers(2, 4)))
    x = rng.standard_normal(shape) * rng.uniform(0.5, 2) + rng.uniform(-1, 1)
    p = LayerParams.batchnorm(shape[1])
    p.bn_gamma = rng.uniform(0.5, 1.5, size=shape[1])
    p.bn_beta = rng.standard_normal(shape[1])
    r = rng.standard_normal(shape)

    def f():
        return float(np.sum(r * nncore.batchnorm_forward(x, p, "train", update_running=False)[0]))

    _, stats = nncore.batchnorm_forward(x, p, "train", update_running=False)
    gi, gg, gb = nncore.batchnorm_backward(x, p, stats, r)
    return max(rel_error(gi, numeric_grad(f, x)), rel_error(gg, numeric_grad(f, p.bn_gamma)),
               rel_error(gb, numeric_grad(f, p.bn_beta)))


def check_loss(name: str, seed: int, delta: float = 1.0) -> float:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    t = rng.uniform(-3, 3, size=(n, 1))
    # keep residuals clear of the kinks at 0 and +-delta
    mag = rng.uniform(0.05, 0.9, size=(n, 1)) if rng.random() < 0.5 else rng.uniform(1.1, 3.0, size=(n, 1))
    p = t + mag * rng.choice([-1.0, 1.0], size=(n, 1))
    fn = get_loss(name, delta)

    def f():
        return fn(p, t)[0]

    return rel_error(fn(p, t)[1], numeric_grad(f, p))


LAYER_CHECKS = {
    "conv3x3": check_conv,
    "maxpool2x2": check_maxpool,
    "fullyconnected": check_fc,
    "relu": check_relu,
    "batchnorm": check_batchnorm,
}


# -- reference merge ----------------------------------------------------------

def final_count_bruteforce(offsets, counts, h, w, r):
    """Per-pixel average over the windows covering it, summed; no shared code with ``infer``."""
    total = 0.0
    for i in range(h):
        for j in range(w):
            vals = [c / (r * r) for (r0, c0), c in zip(offsets, counts) if r0 <= i < r0 + r and c0 <= j < c0 + r]
            if vals:
                total += sum(vals) / len(vals)
    return total
