"""Regression losses averaged over the batch, each returning ``(loss, grad)``.

``grad`` has the shape of ``preds`` and already includes the ``1/M`` factor.
"""

from __future__ import annotations

import numpy as np


def _residual(preds, targets):
    p = np.asarray(preds)
    t = np.asarray(targets)
    if p.shape != t.shape:
        raise ValueError(f"preds {p.shape} and targets {t.shape} differ")
    if p.size == 0:
        raise ValueError("empty batch")
    return p.astype(np.float64) - t.astype(np.float64), p.dtype


def loss_l1(preds, targets):
    a, dtype = _residual(preds, targets)
    m = a.size
    return float(np.abs(a).sum() / m), (np.sign(a) / m).astype(dtype)


def loss_l2(preds, targets):
    a, dtype = _residual(preds, targets)
    m = a.size
    return float(np.square(a).sum() / m), (2.0 * a / m).astype(dtype)


def loss_huber(preds, targets, delta: float = 1.0):
    if not delta > 0:
        raise ValueError(f"huber delta must be > 0, got {delta}")
    a, dtype = _residual(preds, targets)
    m = a.size
    absa = np.abs(a)
    quad = absa <= delta
    per = np.where(quad, 0.5 * a * a, delta * absa - 0.5 * delta * delta)
    grad = np.where(quad, a, delta * np.sign(a))
    return float(per.sum() / m), (grad / m).astype(dtype)


LOSSES = ("l1", "l2", "huber")


def get_loss(name: str, delta: float = 1.0):
    """Look up a loss by name; ``huber`` binds ``delta``."""
    name = name.lower()
    if name == "l1":
        return loss_l1
    if name == "l2":
        return loss_l2
    if name == "huber":
        if not delta > 0:
            raise ValueError(f"huber delta must be > 0, got {delta}")
        return lambda p, t: loss_huber(p, t, delta)
    raise ValueError(f"unknown loss {name!r}; choose from {', '.join(LOSSES)}")
