"""SGD with momentum, Adam, and learning-rate schedules."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError


class SGD:
    def __init__(self, lr: float = 0.01, momentum: float = 0.0):
        self.lr, self.momentum = lr, momentum
        self._vel: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr=None, frozen=None):
        lr = self.lr if lr is None else lr
        for name, g in grads.items():
            g = _mask(g, frozen, name)
            p = params[name]
            if self.momentum:
                v = self._vel.setdefault(name, np.zeros_like(p))
                v *= self.momentum
                v -= lr * g
                p += v
            else:
                p -= lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr=None, frozen=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for name, g in grads.items():
            g = _mask(g, frozen, name)
            p = params[name]
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (lr * corr) * m / (np.sqrt(v) + self.eps)


def _mask(g, frozen, name):
    if frozen and name in frozen:
        return np.where(frozen[name], 0.0, g)
    return g


def make_optimizer(name: str, **kw):
    if name == "adam":
        return Adam(**kw)
    if name == "sgd":
        return SGD(**kw)
    raise ConfigError(f"unknown optimizer {name!r}")


def scheduled_lr(base: float, schedule: dict | None, epoch: int, epochs: int) -> float:
    """Learning rate for a zero-based ``epoch``.

    ``{"type": "constant"}``, ``{"type": "step", "every": k, "gamma": g}`` or
    ``{"type": "cosine"}`` (cosine decay to zero over the run).
    """
    schedule = schedule or {"type": "constant"}
    kind = schedule.get("type", "constant")
    if kind == "constant":
        return base
    if kind == "step":
        return base * schedule.get("gamma", 0.1) ** (epoch // schedule.get("every", 1))
    if kind == "cosine":
        return base * 0.5 * (1 + math.cos(math.pi * epoch / max(epochs, 1)))
    raise ConfigError(f"unknown learning-rate schedule {kind!r}")
