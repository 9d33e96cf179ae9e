"""Soft, smooth and weighted-smooth thresholding with analytic gradients.

All scalar functions broadcast over numpy arrays. At the kink ``|v*x| == T``
every gradient takes the closed (dead-zone) branch, i.e. zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import opcount
from .errors import LengthMismatchError

T_INIT_RANGE = (0.01, 0.1)


def soft_threshold(x, T):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - T, 0.0)


def smooth_threshold(x, T):
    x = np.asarray(x, dtype=float)
    return np.tanh(x) * np.maximum(np.abs(x) - T, 0.0)


def smooth_threshold_grad_T(x, T):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) > T, -np.tanh(x), 0.0)


def smooth_threshold_grad_x(x, T):
    x = np.asarray(x, dtype=float)
    th = np.tanh(x)
    live = np.abs(x) > T
    return np.where(live, (1.0 - th * th) * (np.abs(x) - T) + th * np.sign(x), 0.0)


def _check_weight(v):
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("weighted thresholding requires v >= 0")
    return v


def weighted_smooth_threshold(x, T, v):
    """``tanh(x) * max(|v*x| - T, 0)``; ``v`` scales only the magnitude term."""
    x = np.asarray(x, dtype=float)
    v = _check_weight(v)
    return np.tanh(x) * np.maximum(np.abs(v * x) - T, 0.0)


def weighted_smooth_threshold_grads(x, T, v):
    """Partial derivatives ``(d/dv, d/dT, d/dx)`` of :func:`weighted_smooth_threshold`."""
    x = np.asarray(x, dtype=float)
    v = _check_weight(v)
    th = np.tanh(x)
    ax = np.abs(v * x)
    live = ax > T
    d_v = np.where(live, th * np.abs(x), 0.0)
    d_T = np.where(live, -th, 0.0)
    d_x = np.where(live, (1.0 - th * th) * (ax - T) + th * v * np.sign(x), 0.0)
    return d_v, d_T, d_x


# -- tensor application -----------------------------------------------------


class Broadcast(str, enum.Enum):
    CHANNEL = "channel"   # one parameter per entry of the last axis
    SPATIAL = "spatial"   # one parameter per (x, y) cell of an NHWC tensor


@dataclass
class ThresholdParams:
    """Per-coefficient thresholds ``T``, optional weights ``v`` and a DC pass-through mask."""

    T: np.ndarray
    v: np.ndarray | None = None
    dc_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        if self.dc_mask is None:
            self.dc_mask = np.zeros(self.T.shape, dtype=bool)
        self.dc_mask = np.asarray(self.dc_mask, dtype=bool)
        if self.v is not None:
            self.v = np.asarray(self.v, dtype=float)
            if self.v.shape != self.T.shape:
                raise LengthMismatchError(f"v shape {self.v.shape} != T shape {self.T.shape}")
        if self.dc_mask.shape != self.T.shape:
            raise LengthMismatchError(
                f"dc_mask shape {self.dc_mask.shape} != T shape {self.T.shape}")

    @property
    def weighted(self) -> bool:
        return self.v is not None

    def clamp(self) -> None:
        """Project ``v`` back onto ``v >= 0``."""
        if self.v is not None:
            np.maximum(self.v, 0.0, out=self.v)


def init_threshold_params(shape, rng: np.random.Generator, weighted: bool = False,
                          dc_index=0) -> ThresholdParams:
    """``T ~ U[0.01, 0.1]`` off DC and ``T = 0`` at DC; ``v = 1`` everywhere."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    T = rng.uniform(*T_INIT_RANGE, size=shape)
    dc = np.zeros(shape, dtype=bool)
    dc[dc_index] = True
    T[dc] = 0.0
    v = np.ones(shape) if weighted else None
    return ThresholdParams(T, v, dc)


@dataclass
class ThresholdTape:
    x: np.ndarray
    broadcast: Broadcast
    params: ThresholdParams


def _broadcast_shape(param: np.ndarray, t: np.ndarray, broadcast: Broadcast) -> np.ndarray:
    if broadcast is Broadcast.CHANNEL:
        if param.shape != (t.shape[-1],):
            raise LengthMismatchError(
                f"{param.shape[0] if param.ndim == 1 else param.shape} parameters for "
                f"{t.shape[-1]} channels")
        return param
    if t.ndim != 4:
        raise LengthMismatchError(f"spatial thresholding needs an NHWC tensor, got {t.shape}")
    grid = t.shape[1:3]
    if param.size != grid[0] * grid[1]:
        raise LengthMismatchError(f"{param.size} parameters for a {grid[0]}x{grid[1]} grid")
    return param.reshape(grid[0], grid[1], 1)


def apply_threshold_tensor(t, params: ThresholdParams, broadcast=Broadcast.CHANNEL):
    """(Weighted) smooth thresholding with parameters shared off the broadcast axes.

    Returns the thresholded tensor and the tape needed by
    :func:`threshold_tensor_backward`.
    """
    broadcast = Broadcast(broadcast)
    t = np.asarray(t)
    T = _broadcast_shape(params.T, t, broadcast)
    dc = _broadcast_shape(params.dc_mask, t, broadcast)
    mag = np.abs(t)
    if params.v is not None:
        mag = mag * _broadcast_shape(params.v, t, broadcast)
        opcount.record("threshold_mul", t.size)
    out = np.tanh(t) * np.maximum(mag - T, 0.0)
    opcount.record("threshold_mul", t.size)
    opcount.record("threshold_add", t.size)
    out = np.where(dc, t, out).astype(t.dtype, copy=False)
    return out, ThresholdTape(t, broadcast, params)


def _reduce_to(g: np.ndarray, broadcast: Broadcast, shape) -> np.ndarray:
    if broadcast is Broadcast.CHANNEL:
        return g.reshape(-1, g.shape[-1]).sum(axis=0).reshape(shape)
    return g.sum(axis=(0, 3)).reshape(shape)


def threshold_tensor_backward(grad, tape: ThresholdTape):
    """Gradients ``(d_input, d_T, d_v)``; ``d_v`` is None for unweighted params."""
    x, params, broadcast = tape.x, tape.params, tape.broadcast
    T = _broadcast_shape(params.T, x, broadcast)
    dc = _broadcast_shape(params.dc_mask, x, broadcast)
    v = 1.0 if params.v is None else _broadcast_shape(params.v, x, broadcast)
    th = np.tanh(x)
    ax = np.abs(x) * v
    live = (ax > T) & ~dc
    gl = np.where(live, grad, 0.0)
    d_x = gl * ((1.0 - th * th) * (ax - T) + th * v * np.sign(x))
    d_x = np.where(dc, grad, d_x)
    d_T = _reduce_to(-th * gl, broadcast, params.T.shape)
    d_v = None
    if params.v is not None:
        d_v = _reduce_to(th * np.abs(x) * gl, broadcast, params.v.shape)
    return d_x, d_T, d_v
