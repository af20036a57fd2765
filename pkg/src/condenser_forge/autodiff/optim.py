"""Stochastic gradient descent with optional heavy-ball momentum."""

from __future__ import annotations

import numpy as np

from ..errors import DivergenceError
from .tensor import Tensor


def sgd_step(params, grads, lr: float, momentum: float = 0.0, velocity=None):
    """One SGD update, in place on ``params``.

    ``v <- momentum * v + g``; ``theta <- theta - lr * v``. ``velocity`` is a
    list of arrays parallel to ``params`` (created on first use) and is
    returned so callers can thread it through successive steps. Nothing is
    mutated when any gradient is non-finite.
    """
    if not lr > 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    if not 0 <= momentum < 1:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    params = list(params)
    grads = [None if g is None else np.asarray(g) for g in grads]
    for p, g in zip(params, grads):
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {p.name or p.shape}")
    if velocity is None:
        velocity = [np.zeros_like(p.data) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if momentum:
            velocity[i] = momentum * velocity[i] + g
            step = velocity[i]
        else:
            step = g
        p.data -= p.dtype.type(lr) * step.astype(p.dtype, copy=False)
    return velocity


class SGD:
    """Stateful wrapper around :func:`sgd_step` that reads ``Tensor.grad``."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad for p in self.params]
        self.velocity = sgd_step(self.params, grads, self.lr, self.momentum, self.velocity)
