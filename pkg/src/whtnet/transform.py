"""Hadamard/Walsh matrices and fast Walsh-Hadamard transforms.

The fast path runs ``k`` stages of add/subtract butterflies in natural
(Hadamard) order and, for sequency ordering, gathers the output through a
fixed index permutation afterwards. The only multiplications are the optional
normalization scale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import opcount
from .errors import LengthMismatchError, NotPowerOfTwoError, OrderTooLargeError

MAX_ORDER = 16


class Ordering(str, enum.Enum):
    HADAMARD = "hadamard"
    SEQUENCY = "sequency"


class Normalization(str, enum.Enum):
    NONE = "none"
    ORTHONORMAL = "orthonormal"
    INVERSE = "inverse"


@dataclass(frozen=True)
class WalshSpec:
    """Transform order ``k`` (length ``2**k``), row ordering and output scale."""

    k: int
    ordering: Ordering = Ordering.SEQUENCY
    normalization: Normalization = Normalization.ORTHONORMAL

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or self.k < 0:
            raise ValueError(f"transform order must be a non-negative integer, got {self.k!r}")
        if self.k > MAX_ORDER:
            raise OrderTooLargeError(f"transform order {self.k} exceeds {MAX_ORDER}")
        object.__setattr__(self, "ordering", Ordering(self.ordering))
        object.__setattr__(self, "normalization", Normalization(self.normalization))

    @property
    def m(self) -> int:
        return 1 << self.k

    @classmethod
    def for_length(cls, m: int, ordering=Ordering.SEQUENCY,
                   normalization=Normalization.ORTHONORMAL) -> "WalshSpec":
        return cls(log2_exact(m), ordering, normalization)

    @property
    def scale(self) -> float:
        if self.normalization is Normalization.ORTHONORMAL:
            return 1.0 / np.sqrt(self.m)
        if self.normalization is Normalization.INVERSE:
            return 1.0 / self.m
        return 1.0


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def log2_exact(m: int) -> int:
    if not is_power_of_two(int(m)):
        raise NotPowerOfTwoError(f"length {m} is not a power of two")
    return int(m).bit_length() - 1


def next_pow2_exponent(n: int) -> int:
    """Smallest ``d`` with ``2**d >= n`` (``n >= 1``)."""
    if n < 1:
        raise ValueError(f"need a positive size, got {n}")
    return (int(n) - 1).bit_length()


def _check_order(k: int) -> None:
    if k < 0:
        raise ValueError(f"transform order must be non-negative, got {k}")
    if k > MAX_ORDER:
        raise OrderTooLargeError(f"transform order {k} exceeds {MAX_ORDER}")


# -- permutations -----------------------------------------------------------


@dataclass(frozen=True)
class PermutationPair:
    bit_reversal: np.ndarray
    gray_code: np.ndarray

    def compose(self, gray_first: bool = True) -> np.ndarray:
        """Row-index map ``p`` such that ``W[j] = H[p[j]]``.

        ``gray_first=True`` applies the Gray code to ``j`` and then reverses
        the bits; the other composition is kept for comparison.
        """
        if gray_first:
            return self.bit_reversal[self.gray_code]
        return self.gray_code[self.bit_reversal]


def bit_reversal_permutation(k: int) -> np.ndarray:
    _check_order(k)
    idx = np.arange(1 << k, dtype=np.int64)
    out = np.zeros_like(idx)
    for b in range(k):
        out |= ((idx >> b) & 1) << (k - 1 - b)
    return out


def gray_code_permutation(k: int) -> np.ndarray:
    _check_order(k)
    idx = np.arange(1 << k, dtype=np.int64)
    return idx ^ (idx >> 1)


def permutation_pair(k: int) -> PermutationPair:
    return PermutationPair(bit_reversal_permutation(k), gray_code_permutation(k))


@lru_cache(maxsize=None)
def _sequency_index(k: int) -> np.ndarray:
    p = permutation_pair(k).compose(gray_first=True)
    p.setflags(write=False)
    return p


def sequency_permutation(k: int) -> np.ndarray:
    """Hadamard row index of the ``j``-th sequency-ordered Walsh row."""
    return _sequency_index(k)


# -- dense matrices ---------------------------------------------------------


def hadamard_matrix(k: int) -> np.ndarray:
    """Sylvester-ordered ``2**k`` square matrix of +1/-1 (int8)."""
    _check_order(k)
    h = np.ones((1, 1), dtype=np.int8)
    for _ in range(k):
        h = np.block([[h, h], [h, -h]])
    return h


def walsh_matrix(k: int) -> np.ndarray:
    """Rows of :func:`hadamard_matrix` reordered by sequency (row j has j sign changes)."""
    return hadamard_matrix(k)[sequency_permutation(k)]


def transform_matrix(spec: WalshSpec) -> np.ndarray:
    if spec.ordering is Ordering.SEQUENCY:
        return walsh_matrix(spec.k)
    return hadamard_matrix(spec.k)


def format_matrix(mat: np.ndarray) -> str:
    """Plain-text rows of +1/-1, one row per line."""
    return "\n".join(" ".join(f"{int(v):+d}" for v in row) for row in np.asarray(mat))


# -- fast transforms --------------------------------------------------------


def _as_float(x) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype == np.float32 or x.dtype == np.float64:
        return x
    return x.astype(np.float64)


def _fwht_fibers(a: np.ndarray, ordering: Ordering, scale: float) -> np.ndarray:
    """Transform the middle axis of a C-contiguous ``(pre, m, post)`` array.

    Consumes ``a`` as one of the two ping-pong buffers. Keeping the trailing
    axis innermost lets short spatial fibers run over contiguous channels.
    """
    pre, m, post = a.shape
    src, dst = a, np.empty_like(a)
    h = 1
    while h < m:
        s = src.reshape(pre, m // (2 * h), 2, h, post)
        d = dst.reshape(pre, m // (2 * h), 2, h, post)
        np.add(s[:, :, 0], s[:, :, 1], out=d[:, :, 0])
        np.subtract(s[:, :, 0], s[:, :, 1], out=d[:, :, 1])
        opcount.record("butterfly_add", pre * m * post)
        src, dst = dst, src
        h *= 2
    if ordering is Ordering.SEQUENCY and m > 2:
        np.take(src, _sequency_index(m.bit_length() - 1), axis=1, out=dst)
        src = dst
    if scale != 1.0:
        src *= src.dtype.type(scale)
        opcount.record("scale_mul", pre * m * post)
    return src


def fwht(x, axis: int = -1, ordering=Ordering.SEQUENCY,
         normalization=Normalization.ORTHONORMAL) -> np.ndarray:
    """Fast WHT of every fiber of ``x`` along ``axis``; returns a new array."""
    x = _as_float(x)
    ordering = Ordering(ordering)
    normalization = Normalization(normalization)
    axis = axis % x.ndim
    m = x.shape[axis]
    spec = WalshSpec(log2_exact(m), ordering, normalization)
    pre = int(np.prod(x.shape[:axis], dtype=np.int64))
    if axis == x.ndim - 1 and pre > 1:
        # fibers along the innermost axis: butterfly over the transpose instead
        work = np.ascontiguousarray(x.reshape(pre, m).T).reshape(1, m, pre)
        out = _fwht_fibers(work, ordering, spec.scale).reshape(m, pre)
        return np.ascontiguousarray(out.T).reshape(x.shape)
    work = np.array(x, order="C", copy=True).reshape(pre, m, -1)
    return _fwht_fibers(work, ordering, spec.scale).reshape(x.shape)


def fwht_1d(x, spec: WalshSpec) -> np.ndarray:
    x = _as_float(x)
    if x.ndim != 1:
        raise LengthMismatchError(f"expected a vector, got shape {x.shape}")
    log2_exact(x.shape[0])
    if x.shape[0] != spec.m:
        raise LengthMismatchError(f"vector length {x.shape[0]} != 2**{spec.k}")
    return fwht(x, -1, spec.ordering, spec.normalization)


def fwht_last_axis(t, spec: WalshSpec) -> np.ndarray:
    """Transform every ``(batch, x, y)`` fiber along the channel axis."""
    t = _as_float(t)
    log2_exact(t.shape[-1])
    if t.shape[-1] != spec.m:
        raise LengthMismatchError(f"channel count {t.shape[-1]} != 2**{spec.k}")
    return fwht(t, -1, spec.ordering, spec.normalization)


def fwht_2d(t, spec_w: WalshSpec, spec_h: WalshSpec) -> np.ndarray:
    """Separable transform over the width (axis 1) and height (axis 2) of an NHWC tensor."""
    t = _as_float(t)
    if t.ndim != 4:
        raise LengthMismatchError(f"expected a 4-D tensor, got shape {t.shape}")
    log2_exact(t.shape[1])
    log2_exact(t.shape[2])
    if t.shape[1] != spec_w.m or t.shape[2] != spec_h.m:
        raise LengthMismatchError(
            f"spatial dims {t.shape[1:3]} do not match 2**{spec_w.k} x 2**{spec_h.k}")
    out = fwht(t, 1, spec_w.ordering, spec_w.normalization)
    return fwht(out, 2, spec_h.ordering, spec_h.normalization)


def dense_transform(x, axis: int = -1, ordering=Ordering.SEQUENCY,
                    normalization=Normalization.ORTHONORMAL) -> np.ndarray:
    """Reference transform by dense matrix product; counts its multiply-adds."""
    x = _as_float(x)
    axis = axis % x.ndim
    m = x.shape[axis]
    spec = WalshSpec(log2_exact(m), ordering, normalization)
    mat = transform_matrix(spec).astype(x.dtype)
    moved = np.moveaxis(x, axis, -1)
    fibers = moved.size // m
    out = moved @ mat.T
    opcount.record("dense_mul", fibers * m * m)
    opcount.record("dense_add", fibers * m * (m - 1))
    if spec.scale != 1.0:
        out *= x.dtype.type(spec.scale)
        opcount.record("scale_mul", fibers * m)
    return np.moveaxis(out, -1, axis)
