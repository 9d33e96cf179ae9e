"""Walsh-Hadamard transform layers: channel expansion/projection (single and
block transforms) and the 2D spatial layer.

Every layer is a pair of pure functions: ``<layer>(x, params, ...)`` returns
``(output, LayerTape)`` and :func:`layer_backward` consumes the tape. All
transforms are orthonormal, so two applications compose to ``1/m`` and each
transform is its own adjoint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, ShapeError
from .thresholding import (
    Broadcast,
    ThresholdParams,
    apply_threshold_tensor,
    init_threshold_params,
    threshold_tensor_backward,
)
from .transform import Ordering, fwht, is_power_of_two, next_pow2_exponent


class LayerKind(str, enum.Enum):
    FWHT_EXPAND = "fwht_expand"
    FWHT_PROJECT = "fwht_project"
    BWHT_EXPAND = "bwht_expand"
    BWHT_PROJECT = "bwht_project"
    FWHT2D = "fwht2d"


def as_fraction(t) -> Fraction:
    """Exact rational from an int, Fraction, ``"a/b"`` string or float."""
    if isinstance(t, Fraction):
        return t
    if isinstance(t, float):
        return Fraction(t).limit_denominator(1 << 16)
    return Fraction(t)


def _scaled_channels(c: int, t: Fraction, what: str) -> int:
    tc = c * t
    if tc.denominator != 1 or tc <= 0:
        raise ShapeError(f"{what}: {c} channels times factor {t} is not a positive integer")
    return int(tc)


@dataclass(frozen=True)
class LayerConfig:
    """Hyperparameters of one transform layer.

    ``in_channels`` is the input channel count (``c`` for expansion, ``tc``
    for projection); ``expansion_factor`` is ``t >= 1`` in both directions.
    """

    kind: LayerKind
    in_channels: int
    expansion_factor: Fraction = Fraction(1)
    block_size: int | None = None
    residual: bool = False
    weighted: bool = False
    spatial_dims: tuple[int, int] | None = None
    ordering: Ordering = Ordering.SEQUENCY

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "ordering", Ordering(self.ordering))
        object.__setattr__(self, "expansion_factor", as_fraction(self.expansion_factor))
        if self.spatial_dims is not None:
            object.__setattr__(self, "spatial_dims", tuple(int(d) for d in self.spatial_dims))
        self.validate()

    def validate(self) -> None:
        c, t = self.in_channels, self.expansion_factor
        if c < 1:
            raise ConfigError("in_channels must be positive")
        if t <= 0:
            raise ConfigError("expansion factor must be positive")
        kind = self.kind
        if kind in (LayerKind.BWHT_EXPAND, LayerKind.BWHT_PROJECT):
            s = self.block_size
            if s is None or not is_power_of_two(s):
                raise ConfigError(f"block size must be a power of two, got {s}")
        if kind is LayerKind.FWHT2D:
            if self.spatial_dims is None:
                raise ConfigError("fwht2d needs spatial_dims")
        elif self.residual or self.weighted:
            raise ConfigError("residual/weighted apply to fwht2d only")
        # Shape checks share the code path of the layer functions.
        self.out_channels  # noqa: B018
        if kind is LayerKind.BWHT_EXPAND:
            plan = block_index_plan(c, self.block_size, t)
            if plan.block_count * self.block_size != self.out_channels:
                raise ConfigError(
                    f"{self.out_channels} output channels are not a whole number of "
                    f"size-{self.block_size} blocks")
        if kind is LayerKind.BWHT_PROJECT:
            _bwht_project_shapes(c, self.block_size, t)

    @property
    def out_channels(self) -> int:
        c, t = self.in_channels, self.expansion_factor
        if self.kind in (LayerKind.FWHT_EXPAND, LayerKind.BWHT_EXPAND):
            return _scaled_channels(c, t, self.kind.value)
        if self.kind in (LayerKind.FWHT_PROJECT, LayerKind.BWHT_PROJECT):
            return _scaled_channels(c, 1 / t, self.kind.value)
        return c

    @property
    def threshold_shape(self) -> tuple[int, ...]:
        c, t = self.in_channels, self.expansion_factor
        if self.kind is LayerKind.FWHT_EXPAND:
            return (1 << next_pow2_exponent(max(c, self.out_channels)),)
        if self.kind is LayerKind.FWHT_PROJECT:
            return (1 << next_pow2_exponent(c),)
        if self.kind is LayerKind.FWHT2D:
            w, h = self.spatial_dims
            return (1 << next_pow2_exponent(w), 1 << next_pow2_exponent(h))
        return (self.block_size,)

    def init_params(self, rng: np.random.Generator) -> ThresholdParams:
        shape = self.threshold_shape
        dc = (0, 0) if self.kind is LayerKind.FWHT2D else 0
        return init_threshold_params(shape, rng, weighted=self.weighted, dc_index=dc)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "in_channels": self.in_channels,
             "expansion_factor": str(self.expansion_factor)}
        if self.block_size is not None:
            d["block_size"] = self.block_size
        if self.kind is LayerKind.FWHT2D:
            d.update(residual=self.residual, weighted=self.weighted,
                     spatial_dims=list(self.spatial_dims))
        if self.ordering is not Ordering.SEQUENCY:
            d["ordering"] = self.ordering.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerConfig":
        known = {"kind", "in_channels", "expansion_factor", "block_size", "residual",
                 "weighted", "spatial_dims", "ordering"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown layer config keys: {sorted(extra)}")
        return cls(**d)


def param_count(cfg: LayerConfig) -> tuple[int, int]:
    """(trainable parameters, parameters of the convolution the layer replaces).

    1D layers freeze their DC threshold, so they report ``size - 1``; the 2D
    layer reports its full threshold grid (and weight grid when weighted). The
    comparison is a 1x1 convolution for channel layers and a depth-preserving
    3x3 filter bank (``9*c``) for the 2D layer.
    """
    size = int(np.prod(cfg.threshold_shape))
    if cfg.kind is LayerKind.FWHT2D:
        return size * (2 if cfg.weighted else 1), 9 * cfg.in_channels
    return size - 1, cfg.in_channels * cfg.out_channels


@dataclass
class LayerTape:
    op: LayerKind
    saved: dict = field(default_factory=dict)


def _pad_axis(x: np.ndarray, axis: int, size: int) -> np.ndarray:
    extra = size - x.shape[axis]
    if extra == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (0, extra)
    return np.pad(x, widths)


def _check_params(params: ThresholdParams, shape) -> None:
    if params.T.shape != tuple(shape):
        raise ShapeError(f"threshold shape {params.T.shape}, layer needs {tuple(shape)}")


# -- single-transform channel layers -----------------------------------------


def fwht_expand(x, params: ThresholdParams, t=2, ordering=Ordering.SEQUENCY):
    """Zero-pad channels to ``2**d``, transform, threshold off DC, transform back, truncate to ``t*c``."""
    x = np.asarray(x)
    c = x.shape[-1]
    tc = _scaled_channels(c, as_fraction(t), "fwht_expand")
    m = 1 << next_pow2_exponent(max(c, tc))
    _check_params(params, (m,))
    y = fwht(_pad_axis(x, -1, m), -1, ordering)
    yt, thr = apply_threshold_tensor(y, params, Broadcast.CHANNEL)
    z = fwht(yt, -1, ordering)[..., :tc]
    return z, LayerTape(LayerKind.FWHT_EXPAND, dict(thr=thr, c=c, m=m, ordering=ordering))


def _fwht_expand_backward(dz, s):
    g = _pad_axis(dz, -1, s["m"])
    g = fwht(g, -1, s["ordering"])
    g, dT, dv = threshold_tensor_backward(g, s["thr"])
    dx = fwht(g, -1, s["ordering"])[..., : s["c"]]
    return dx, dT, dv


def fwht_project(x, params: ThresholdParams, t=2, ordering=Ordering.SEQUENCY):
    """Reduce ``tc`` channels to ``c = tc/t`` by pooling the thresholded AC coefficients.

    The DC coefficient is divided by ``r = 2**(p-q)``; AC coefficients
    ``1 .. 2**p - r`` are average-pooled in disjoint windows of ``r`` and the
    last ``r - 1`` are dropped.
    """
    x = np.asarray(x)
    tc = x.shape[-1]
    c = _scaled_channels(tc, 1 / as_fraction(t), "fwht_project")
    p, q = next_pow2_exponent(tc), next_pow2_exponent(c)
    if q > p:
        raise ShapeError("fwht_project cannot increase the channel count")
    r = 1 << (p - q)
    _check_params(params, (1 << p,))
    y = fwht(_pad_axis(x, -1, 1 << p), -1, ordering)
    yt, thr = apply_threshold_tensor(y, params, Broadcast.CHANNEL)
    ac = yt[..., 1:(1 << p) - r + 1]
    pooled = ac.reshape(*ac.shape[:-1], (1 << q) - 1, r).mean(axis=-1)
    yh = np.concatenate([y[..., :1] / r, pooled], axis=-1)
    z = fwht(yh, -1, ordering)[..., :c]
    saved = dict(thr=thr, tc=tc, p=p, q=q, r=r, ordering=ordering)
    return z, LayerTape(LayerKind.FWHT_PROJECT, saved)


def _fwht_project_backward(dz, s):
    p, q, r, ordering = s["p"], s["q"], s["r"], s["ordering"]
    g = fwht(_pad_axis(dz, -1, 1 << q), -1, ordering)
    d_thr = np.zeros(g.shape[:-1] + (1 << p,), dtype=g.dtype)
    d_thr[..., 1:(1 << p) - r + 1] = np.repeat(g[..., 1:], r, axis=-1) / r
    dy, dT, dv = threshold_tensor_backward(d_thr, s["thr"])
    dy[..., 0] += g[..., 0] / r
    dx = fwht(dy, -1, ordering)[..., : s["tc"]]
    return dx, dT, dv


# -- block layers -------------------------------------------------------------


@dataclass(frozen=True)
class BlockIndexPlan:
    starts: np.ndarray
    block_size: int

    @property
    def block_count(self) -> int:
        return len(self.starts)


def block_index_plan(c: int, s: int, t=1) -> BlockIndexPlan:
    """Start indices ``floor(linspace(0, c - s, floor(t*c/s)))`` of overlapping channel blocks.

    Evaluated in exact integer arithmetic so integral grid points never round
    down.
    """
    t = as_fraction(t)
    if s > c:
        raise ShapeError(f"block size {s} is larger than the {c} input channels")
    n = int((c * t) // s)
    if n < 1:
        raise ShapeError(f"{c}*{t} channels make no block of size {s}")
    if n == 1:
        starts = np.zeros(1, dtype=np.int64)
    else:
        starts = (np.arange(n, dtype=np.int64) * (c - s)) // (n - 1)
    return BlockIndexPlan(starts, s)


def resample(x, s: int, t=1) -> np.ndarray:
    """Gather overlapping channel windows into a ``(..., blocks, s)`` tensor."""
    x = np.asarray(x)
    plan = block_index_plan(x.shape[-1], s, t)
    idx = plan.starts[:, None] + np.arange(s)
    return x[..., idx]


def _resample_backward(g: np.ndarray, plan: BlockIndexPlan, c: int) -> np.ndarray:
    dx = np.zeros(g.shape[:-2] + (c,), dtype=g.dtype)
    s = plan.block_size
    for i, k in enumerate(plan.starts):
        dx[..., k:k + s] += g[..., i, :]
    return dx


def bwht_expand(x, params: ThresholdParams, s: int, t=2, ordering=Ordering.SEQUENCY):
    """Block transform layer producing ``t*c`` channels from overlapping blocks of size ``s``."""
    x = np.asarray(x)
    c = x.shape[-1]
    if not is_power_of_two(s):
        raise ShapeError(f"block size {s} is not a power of two")
    tc = _scaled_channels(c, as_fraction(t), "bwht_expand")
    plan = block_index_plan(c, s, t)
    if plan.block_count * s != tc:
        raise ShapeError(f"{tc} output channels are not a whole number of size-{s} blocks")
    _check_params(params, (s,))
    blocks = x[..., plan.starts[:, None] + np.arange(s)]
    y = fwht(blocks, -1, ordering)
    yt, thr = apply_threshold_tensor(y, params, Broadcast.CHANNEL)
    z = fwht(yt, -1, ordering).reshape(x.shape[:-1] + (tc,))
    saved = dict(thr=thr, plan=plan, c=c, ordering=ordering)
    return z, LayerTape(LayerKind.BWHT_EXPAND, saved)


def _bwht_expand_backward(dz, s):
    plan = s["plan"]
    g = dz.reshape(dz.shape[:-1] + (plan.block_count, plan.block_size))
    g = fwht(g, -1, s["ordering"])
    g, dT, dv = threshold_tensor_backward(g, s["thr"])
    g = fwht(g, -1, s["ordering"])
    return _resample_backward(g, plan, s["c"]), dT, dv


def _bwht_project_shapes(tc: int, s: int, t) -> tuple[int, int]:
    t = as_fraction(t)
    if tc % s:
        raise ShapeError(f"{tc} channels are not divisible into blocks of {s}")
    if t.denominator != 1:
        raise ShapeError(f"projection pooling window must be an integer, got {t}")
    c = _scaled_channels(tc, 1 / t, "bwht_project")
    return c, int(t)


def bwht_project(x, params: ThresholdParams, s: int, t=2, ordering=Ordering.SEQUENCY):
    """Contiguous-block transform layer followed by channel average pooling of window ``t``."""
    x = np.asarray(x)
    tc = x.shape[-1]
    if not is_power_of_two(s):
        raise ShapeError(f"block size {s} is not a power of two")
    c, window = _bwht_project_shapes(tc, s, t)
    _check_params(params, (s,))
    y = fwht(x.reshape(x.shape[:-1] + (tc // s, s)), -1, ordering)
    yt, thr = apply_threshold_tensor(y, params, Broadcast.CHANNEL)
    zt = fwht(yt, -1, ordering).reshape(x.shape)
    z = zt.reshape(x.shape[:-1] + (c, window)).mean(axis=-1)
    saved = dict(thr=thr, s=s, window=window, ordering=ordering)
    return z, LayerTape(LayerKind.BWHT_PROJECT, saved)


def _bwht_project_backward(dz, s):
    g = np.repeat(dz, s["window"], axis=-1) / s["window"]
    g = g.reshape(g.shape[:-1] + (g.shape[-1] // s["s"], s["s"]))
    g = fwht(g, -1, s["ordering"])
    g, dT, dv = threshold_tensor_backward(g, s["thr"])
    g = fwht(g, -1, s["ordering"])
    return g.reshape(g.shape[:-2] + (-1,)), dT, dv


# -- 2D layer -----------------------------------------------------------------


def _fwht2(x, ordering):
    return fwht(fwht(x, 1, ordering), 2, ordering)


def fwht2d_layer(x, params: ThresholdParams, residual: bool = False,
                 ordering=Ordering.SEQUENCY):
    """Spatial transform layer; the (0, 0) coefficient bypasses thresholding."""
    x = np.asarray(x)
    n, w, h, c = x.shape
    P, Q = 1 << next_pow2_exponent(w), 1 << next_pow2_exponent(h)
    _check_params(params, (P, Q))
    if not params.dc_mask[0, 0]:
        raise ShapeError("fwht2d parameters must mask the DC cell")
    y = _fwht2(_pad_axis(_pad_axis(x, 1, P), 2, Q), ordering)
    yt, thr = apply_threshold_tensor(y, params, Broadcast.SPATIAL)
    z = _fwht2(yt, ordering)[:, :w, :h, :]
    if residual:
        z = z + x
    saved = dict(thr=thr, w=w, h=h, P=P, Q=Q, residual=residual, ordering=ordering)
    return z, LayerTape(LayerKind.FWHT2D, saved)


def _fwht2d_backward(dz, s):
    g = _pad_axis(_pad_axis(dz, 1, s["P"]), 2, s["Q"])
    g = _fwht2(g, s["ordering"])
    g, dT, dv = threshold_tensor_backward(g, s["thr"])
    dx = _fwht2(g, s["ordering"])[:, : s["w"], : s["h"], :]
    if s["residual"]:
        dx = dx + dz
    return dx, dT, dv


_BACKWARD = {
    LayerKind.FWHT_EXPAND: _fwht_expand_backward,
    LayerKind.FWHT_PROJECT: _fwht_project_backward,
    LayerKind.BWHT_EXPAND: _bwht_expand_backward,
    LayerKind.BWHT_PROJECT: _bwht_project_backward,
    LayerKind.FWHT2D: _fwht2d_backward,
}


def layer_backward(dz, tape: LayerTape):
    """Gradients ``(d_input, d_T, d_v)`` for any layer tape (``d_v`` None if unweighted)."""
    return _BACKWARD[tape.op](np.asarray(dz), tape.saved)


def apply_layer(cfg: LayerConfig, x, params: ThresholdParams):
    """Run the layer described by ``cfg``."""
    t, o = cfg.expansion_factor, cfg.ordering
    if cfg.kind is LayerKind.FWHT_EXPAND:
        return fwht_expand(x, params, t, o)
    if cfg.kind is LayerKind.FWHT_PROJECT:
        return fwht_project(x, params, t, o)
    if cfg.kind is LayerKind.BWHT_EXPAND:
        return bwht_expand(x, params, cfg.block_size, t, o)
    if cfg.kind is LayerKind.BWHT_PROJECT:
        return bwht_project(x, params, cfg.block_size, t, o)
    return fwht2d_layer(x, params, cfg.residual, o)
