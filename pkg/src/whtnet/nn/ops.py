"""Baseline NHWC operators with explicit backward passes.

Each ``op`` returns ``(output, cache)`` and ``op_backward(dy, cache)`` returns
the input gradient followed by parameter gradients.
"""

from __future__ import annotations

import numpy as np

from .. import opcount
from ..errors import ShapeError


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    opcount.record("matmul_mul", a.shape[0] * a.shape[1] * b.shape[1])
    opcount.record("matmul_add", a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


# -- convolutions ---------------------------------------------------------


def conv1x1(x, kernel, bias=None):
    x = np.asarray(x)
    if kernel.shape[0] != x.shape[-1]:
        raise ShapeError(f"kernel expects {kernel.shape[0]} input channels, got {x.shape[-1]}")
    flat = x.reshape(-1, x.shape[-1])
    y = _matmul(flat, kernel)
    if bias is not None:
        opcount.record("bias_add", y.size)
        y += bias
    return y.reshape(x.shape[:-1] + (kernel.shape[1],)), (x, kernel, bias is not None)


def conv1x1_backward(dy, cache):
    x, kernel, has_bias = cache
    g = dy.reshape(-1, dy.shape[-1])
    dk = x.reshape(-1, x.shape[-1]).T @ g
    dx = (g @ kernel.T).reshape(x.shape)
    db = g.sum(axis=0) if has_bias else None
    return dx, dk, db


def same_padding(n: int, k: int, stride: int) -> tuple[int, int, int]:
    """Output size and (before, after) padding of a 'same' convolution."""
    out = -(-n // stride)
    total = max((out - 1) * stride + k - n, 0)
    return out, total // 2, total - total // 2


def conv3x3(x, kernel, stride: int = 1, bias=None):
    """3x3 cross-correlation with 'same' zero padding, via im2col."""
    x = np.asarray(x)
    if kernel.shape[:3] != (3, 3, x.shape[-1]):
        raise ShapeError(f"kernel {kernel.shape} does not fit {x.shape[-1]} input channels")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    n, w, h, c = x.shape
    wo, w0, w1 = same_padding(w, 3, stride)
    ho, h0, h1 = same_padding(h, 3, stride)
    xp = np.pad(x, ((0, 0), (w0, w1), (h0, h1), (0, 0)))
    cols = np.concatenate(
        [xp[:, i:i + (wo - 1) * stride + 1:stride, j:j + (ho - 1) * stride + 1:stride, :]
         for i in range(3) for j in range(3)], axis=-1)
    cout = kernel.shape[-1]
    y = _matmul(cols.reshape(-1, 9 * c), kernel.reshape(9 * c, cout))
    if bias is not None:
        opcount.record("bias_add", y.size)
        y += bias
    cache = (cols, kernel, x.shape, xp.shape, (w0, h0), stride, bias is not None)
    return y.reshape(n, wo, ho, cout), cache


def conv3x3_backward(dy, cache):
    cols, kernel, xshape, pshape, (w0, h0), stride, has_bias = cache
    n, w, h, c = xshape
    _, wo, ho, cout = dy.shape
    g = dy.reshape(-1, cout)
    k2 = kernel.reshape(9 * c, cout)
    dk = (cols.reshape(-1, 9 * c).T @ g).reshape(kernel.shape)
    dcols = (g @ k2.T).reshape(n, wo, ho, 9, c)
    dxp = np.zeros(pshape, dtype=dy.dtype)
    for idx in range(9):
        i, j = divmod(idx, 3)
        dxp[:, i:i + (wo - 1) * stride + 1:stride, j:j + (ho - 1) * stride + 1:stride, :] += \
            dcols[:, :, :, idx, :]
    dx = dxp[:, w0:w0 + w, h0:h0 + h, :]
    db = g.sum(axis=0) if has_bias else None
    return np.ascontiguousarray(dx), dk, db


# -- normalization / activations / pooling --------------------------------


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = 0.99, eps: float = 1e-3):
    """Per-channel normalization over all non-channel axes.

    In training mode the running statistics are updated in place.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return xhat * gamma + beta, (xhat, inv, gamma, training)


def batch_norm_backward(dy, cache):
    xhat, inv, gamma, training = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    g = dy * gamma
    if training:
        count = dy.size // dy.shape[-1]
        dx = inv / count * (count * g - g.sum(axis=axes) - xhat * (g * xhat).sum(axis=axes))
    else:
        dx = g * inv
    return dx, dgamma, dbeta


def relu(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, cache):
    return dy * cache


def gap(x):
    """Mean over the spatial axes of an NHWC tensor -> (n, c)."""
    opcount.record("pool_add", x.size)
    opcount.record("pool_mul", x.shape[0] * x.shape[-1])
    return x.mean(axis=(1, 2)), x.shape


def gap_backward(dy, cache):
    n, w, h, c = cache
    return np.broadcast_to(dy[:, None, None, :] / (w * h), cache).copy()


def dense(x, kernel, bias=None):
    y = _matmul(x, kernel)
    if bias is not None:
        opcount.record("bias_add", y.size)
        y = y + bias
    return y, (x, kernel, bias is not None)


def dense_backward(dy, cache):
    x, kernel, has_bias = cache
    return dy @ kernel.T, x.T @ dy, (dy.sum(axis=0) if has_bias else None)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def squeeze_excite(x, k1, b1, k2, b2):
    """GAP -> dense -> ReLU -> dense -> sigmoid -> per-channel rescale of ``x``."""
    s, gcache = gap(x)
    a, d1 = dense(s, k1, b1)
    r, rmask = relu(a)
    e, d2 = dense(r, k2, b2)
    gate = sigmoid(e)
    opcount.record("scale_mul", x.size)
    return x * gate[:, None, None, :], (x, gcache, d1, rmask, d2, gate)


def squeeze_excite_backward(dy, cache):
    x, gcache, d1, rmask, d2, gate = cache
    dx = dy * gate[:, None, None, :]
    dgate = (dy * x).sum(axis=(1, 2))
    de = dgate * gate * (1 - gate)
    dr, dk2, db2 = dense_backward(de, d2)
    da = relu_backward(dr, rmask)
    ds, dk1, db1 = dense_backward(da, d1)
    dx += gap_backward(ds, gcache)
    return dx, dk1, db1, dk2, db2


# -- loss -------------------------------------------------------------------


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy of integer ``labels``; returns ``(loss, dlogits)``."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
