"""Layer objects for the training stack.

A module owns its parameter arrays; ``forward`` is pure apart from batch-norm
running statistics and returns a cache that ``backward`` turns into the input
gradient plus a ``{param name: gradient}`` dict.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from ..errors import ConfigError, ShapeError
from ..layers import LayerConfig, LayerKind, apply_layer, as_fraction, layer_backward
from ..layers import param_count as wht_param_count
from ..thresholding import ThresholdParams
from ..transform import Ordering, is_power_of_two
from . import ops


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Module:
    type_name = "module"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        # Boolean masks of parameter entries that are never trained nor counted.
        self.frozen: dict[str, np.ndarray] = {}
        self.in_shape: tuple | None = None
        self.out_shape: tuple | None = None

    def build(self, in_shape: tuple, rng: np.random.Generator, dtype=np.float64) -> tuple:
        self.in_shape = tuple(in_shape)
        self.dtype = dtype
        self.out_shape = self._build(self.in_shape, rng)
        for d in (self.params, self.buffers):
            for k, v in d.items():
                d[k] = np.ascontiguousarray(v, dtype=dtype)
        return self.out_shape

    def _build(self, in_shape, rng):
        return in_shape

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def children(self) -> list[tuple[str, "Module"]]:
        return []

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.params.items()}
        for name, child in self.children():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.buffers.items()}
        for name, child in self.children():
            out.update(child.named_buffers(f"{prefix}{name}."))
        return out

    def named_frozen(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.frozen.items()}
        for name, child in self.children():
            out.update(child.named_frozen(f"{prefix}{name}."))
        return out

    def trainable_count(self) -> int:
        own = sum(p.size for p in self.params.values())
        own -= sum(int(m.sum()) for m in self.frozen.values())
        return own + sum(c.trainable_count() for _, c in self.children())

    def non_trainable_count(self) -> int:
        own = sum(b.size for b in self.buffers.values())
        return own + sum(c.non_trainable_count() for _, c in self.children())

    def after_step(self) -> None:
        for _, child in self.children():
            child.after_step()

    def config(self) -> dict:
        return {"type": self.type_name}


def _need_rank(shape, rank, who):
    if len(shape) != rank:
        raise ShapeError(f"{who} expects rank-{rank} per-sample input, got shape {shape}")


class Conv1x1(Module):
    type_name = "conv1x1"

    def __init__(self, filters: int, stride: int = 1, bias: bool = False):
        super().__init__()
        self.filters, self.stride, self.bias = int(filters), int(stride), bool(bias)

    def _build(self, in_shape, rng):
        _need_rank(in_shape, 3, "conv1x1")
        w, h, c = in_shape
        self.params["kernel"] = kaiming_normal(rng, (c, self.filters), c)
        if self.bias:
            self.params["bias"] = np.zeros(self.filters)
        s = self.stride
        return (-(-w // s), -(-h // s), self.filters)

    def forward(self, x, training=False):
        s = self.stride
        xs = x[:, ::s, ::s, :] if s > 1 else x
        y, cache = ops.conv1x1(xs, self.params["kernel"], self.params.get("bias"))
        return y, (cache, x.shape)

    def backward(self, dy, cache):
        cache, xshape = cache
        dxs, dk, db = ops.conv1x1_backward(dy, cache)
        grads = {"kernel": dk}
        if db is not None:
            grads["bias"] = db
        s = self.stride
        if s > 1:
            dx = np.zeros(xshape, dtype=dxs.dtype)
            dx[:, ::s, ::s, :] = dxs
            return dx, grads
        return dxs, grads

    def config(self):
        return {"type": self.type_name, "filters": self.filters, "stride": self.stride,
                "bias": self.bias}


class Conv3x3(Module):
    type_name = "conv3x3"

    def __init__(self, filters: int, stride: int = 1, bias: bool = False):
        super().__init__()
        self.filters, self.stride, self.bias = int(filters), int(stride), bool(bias)

    def _build(self, in_shape, rng):
        _need_rank(in_shape, 3, "conv3x3")
        w, h, c = in_shape
        self.params["kernel"] = kaiming_normal(rng, (3, 3, c, self.filters), 9 * c)
        if self.bias:
            self.params["bias"] = np.zeros(self.filters)
        s = self.stride
        return (-(-w // s), -(-h // s), self.filters)

    def forward(self, x, training=False):
        return ops.conv3x3(x, self.params["kernel"], self.stride, self.params.get("bias"))

    def backward(self, dy, cache):
        dx, dk, db = ops.conv3x3_backward(dy, cache)
        grads = {"kernel": dk}
        if db is not None:
            grads["bias"] = db
        return dx, grads

    def config(self):
        return {"type": self.type_name, "filters": self.filters, "stride": self.stride,
                "bias": self.bias}


class BatchNorm(Module):
    type_name = "batchnorm"

    def __init__(self, momentum: float = 0.99, eps: float = 1e-3):
        super().__init__()
        self.momentum, self.eps = momentum, eps

    def _build(self, in_shape, rng):
        c = in_shape[-1]
        self.params["gamma"] = np.ones(c)
        self.params["beta"] = np.zeros(c)
        self.buffers["moving_mean"] = np.zeros(c)
        self.buffers["moving_var"] = np.ones(c)
        return in_shape

    def forward(self, x, training=False):
        return ops.batch_norm(x, self.params["gamma"], self.params["beta"],
                              self.buffers["moving_mean"], self.buffers["moving_var"],
                              training, self.momentum, self.eps)

    def backward(self, dy, cache):
        dx, dg, db = ops.batch_norm_backward(dy, cache)
        return dx, {"gamma": dg, "beta": db}


class ReLU(Module):
    type_name = "relu"

    def forward(self, x, training=False):
        return ops.relu(x)

    def backward(self, dy, cache):
        return ops.relu_backward(dy, cache), {}


class GAP(Module):
    type_name = "gap"

    def _build(self, in_shape, rng):
        _need_rank(in_shape, 3, "gap")
        return (in_shape[-1],)

    def forward(self, x, training=False):
        return ops.gap(x)

    def backward(self, dy, cache):
        return ops.gap_backward(dy, cache), {}


class Dense(Module):
    type_name = "dense"

    def __init__(self, units: int, bias: bool = True):
        super().__init__()
        self.units, self.bias = int(units), bool(bias)

    def _build(self, in_shape, rng):
        _need_rank(in_shape, 1, "dense")
        self.params["kernel"] = kaiming_normal(rng, (in_shape[0], self.units), in_shape[0])
        if self.bias:
            self.params["bias"] = np.zeros(self.units)
        return (self.units,)

    def forward(self, x, training=False):
        return ops.dense(x, self.params["kernel"], self.params.get("bias"))

    def backward(self, dy, cache):
        dx, dk, db = ops.dense_backward(dy, cache)
        grads = {"kernel": dk}
        if db is not None:
            grads["bias"] = db
        return dx, grads

    def config(self):
        return {"type": self.type_name, "units": self.units, "bias": self.bias}


class SqueezeExcite(Module):
    type_name = "squeeze_excite"

    def __init__(self, ratio=Fraction(1, 4)):
        super().__init__()
        self.ratio = as_fraction(ratio)

    def _build(self, in_shape, rng):
        _need_rank(in_shape, 3, "squeeze_excite")
        c = in_shape[-1]
        mid = c * self.ratio
        if mid.denominator != 1 or mid < 1:
            raise ShapeError(f"squeeze ratio {self.ratio} of {c} channels is not a positive integer")
        mid = int(mid)
        self.params["k1"] = kaiming_normal(rng, (c, mid), c)
        self.params["b1"] = np.zeros(mid)
        self.params["k2"] = kaiming_normal(rng, (mid, c), mid)
        self.params["b2"] = np.zeros(c)
        return in_shape

    def forward(self, x, training=False):
        p = self.params
        return ops.squeeze_excite(x, p["k1"], p["b1"], p["k2"], p["b2"])

    def backward(self, dy, cache):
        dx, dk1, db1, dk2, db2 = ops.squeeze_excite_backward(dy, cache)
        return dx, {"k1": dk1, "b1": db1, "k2": dk2, "b2": db2}

    def config(self):
        return {"type": self.type_name, "ratio": str(self.ratio)}


class Subsample(Module):
    """Keeps every ``stride``-th pixel along width and height."""

    type_name = "subsample"

    def __init__(self, stride: int = 2):
        super().__init__()
        self.stride = int(stride)

    def _build(self, in_shape, rng):
        w, h, c = in_shape
        s = self.stride
        return (-(-w // s), -(-h // s), c)

    def forward(self, x, training=False):
        s = self.stride
        return x[:, ::s, ::s, :], x.shape

    def backward(self, dy, cache):
        dx = np.zeros(cache, dtype=dy.dtype)
        s = self.stride
        dx[:, ::s, ::s, :] = dy
        return dx, {}

    def config(self):
        return {"type": self.type_name, "stride": self.stride}


class WHT(Module):
    """Any transform-domain layer; shape-dependent fields are filled at build time."""

    def __init__(self, kind, t=1, block_size: int | None = None, residual: bool = False,
                 weighted: bool = False, ordering=Ordering.SEQUENCY):
        super().__init__()
        self.kind = LayerKind(kind)
        self.t = as_fraction(t)
        self.block_size = block_size
        self.residual, self.weighted = bool(residual), bool(weighted)
        self.ordering = Ordering(ordering)
        self.layer_config: LayerConfig | None = None
        self.type_name = self.kind.value

    def _build(self, in_shape, rng):
        _need_rank(in_shape, 3, self.kind.value)
        w, h, c = in_shape
        cfg = LayerConfig(self.kind, c, self.t, self.block_size, self.residual, self.weighted,
                          (w, h) if self.kind is LayerKind.FWHT2D else None, self.ordering)
        self.layer_config = cfg
        tp = cfg.init_params(rng)
        self.params["T"] = tp.T
        if tp.v is not None:
            self.params["v"] = tp.v
        self._dc_mask = tp.dc_mask
        if self.kind is not LayerKind.FWHT2D:
            self.frozen["T"] = tp.dc_mask.copy()
        return (w, h, cfg.out_channels)

    def threshold_params(self) -> ThresholdParams:
        return ThresholdParams(self.params["T"], self.params.get("v"), self._dc_mask)

    def forward(self, x, training=False):
        return apply_layer(self.layer_config, x, self.threshold_params())

    def backward(self, dy, cache):
        dx, dT, dv = layer_backward(dy, cache)
        grads = {"T": dT}
        if dv is not None:
            grads["v"] = dv
        return dx, grads

    def after_step(self):
        if "v" in self.params:
            np.maximum(self.params["v"], 0.0, out=self.params["v"])

    def param_count(self) -> tuple[int, int]:
        return wht_param_count(self.layer_config)

    def config(self):
        d = {"type": self.kind.value}
        if self.kind is not LayerKind.FWHT2D:
            d["t"] = str(self.t)
        if self.block_size is not None:
            d["block_size"] = self.block_size
        if self.kind is LayerKind.FWHT2D:
            d.update(residual=self.residual, weighted=self.weighted)
        if self.ordering is not Ordering.SEQUENCY:
            d["ordering"] = self.ordering.value
        return d


RESIDUAL_VARIANTS = ("original", "completely_revised", "partially_revised")


class ResidualBlock(Module):
    """Two-stage residual block; the revised variants swap convolutions for transform layers.

    ``original``: conv3x3-BN-ReLU-conv3x3-BN, 1x1 conv shortcut on shape change.
    ``partially_revised``: the second conv becomes a 2D transform layer and the
    shortcut conv a block transform layer.
    ``completely_revised``: both convs become 2D transform layers; a stride or
    channel change in the main path is done by subsampling and a block
    transform layer. A ReLU follows the sum in every variant.
    """

    type_name = "residual_block"

    def __init__(self, variant: str, channels: int, stride: int = 1, bias: bool = False,
                 weighted: bool = False):
        super().__init__()
        if variant not in RESIDUAL_VARIANTS:
            raise ConfigError(f"unknown residual variant {variant!r}")
        self.variant, self.channels, self.stride = variant, int(channels), int(stride)
        self.bias, self.weighted = bool(bias), bool(weighted)
        self.main: list[Module] = []
        self.shortcut: list[Module] = []

    def _revised_shortcut(self, cin):
        layers: list[Module] = []
        if self.stride > 1:
            layers.append(Subsample(self.stride))
        if cin != self.channels:
            layers.append(WHT(LayerKind.BWHT_EXPAND, Fraction(self.channels, cin), block_size=cin))
        return layers

    def _build(self, in_shape, rng):
        _need_rank(in_shape, 3, "residual_block")
        cin, ch, s, b = in_shape[-1], self.channels, self.stride, self.bias
        reshape = s > 1 or cin != ch
        if self.variant != "original":
            if not (is_power_of_two(cin) and is_power_of_two(ch)):
                raise ConfigError("revised residual blocks need power-of-two channel counts")
            if reshape and ch % cin:
                raise ConfigError("revised residual blocks can only widen by an integer factor")

        def fwht2d():
            return WHT(LayerKind.FWHT2D, weighted=self.weighted)

        if self.variant == "original":
            self.main = [Conv3x3(ch, s, b), BatchNorm(), ReLU(), Conv3x3(ch, 1, b), BatchNorm()]
            self.shortcut = [Conv1x1(ch, s, b)] if reshape else []
        elif self.variant == "partially_revised":
            self.main = [Conv3x3(ch, s, b), BatchNorm(), ReLU(), fwht2d(), BatchNorm()]
            self.shortcut = self._revised_shortcut(cin)
        else:
            self.main = self._revised_shortcut(cin) + [
                fwht2d(), BatchNorm(), ReLU(), fwht2d(), BatchNorm()]
            self.shortcut = self._revised_shortcut(cin)
        shape = in_shape
        for layer in self.main:
            shape = layer.build(shape, rng, self.dtype)
        short = in_shape
        for layer in self.shortcut:
            short = layer.build(short, rng, self.dtype)
        if short != shape:
            raise ShapeError(f"residual paths disagree: {shape} vs {short}")
        return shape

    def children(self):
        return ([(f"main.{i}", m) for i, m in enumerate(self.main)]
                + [(f"shortcut.{i}", m) for i, m in enumerate(self.shortcut)])

    def forward(self, x, training=False):
        caches_main, caches_short = [], []
        y = x
        for layer in self.main:
            y, c = layer.forward(y, training)
            caches_main.append(c)
        sc = x
        for layer in self.shortcut:
            sc, c = layer.forward(sc, training)
            caches_short.append(c)
        pre = y + sc
        out, mask = ops.relu(pre)
        return out, (caches_main, caches_short, mask)

    def backward(self, dy, cache):
        caches_main, caches_short, mask = cache
        g = ops.relu_backward(dy, mask)
        grads = {}
        gm = g
        for i in reversed(range(len(self.main))):
            gm, pg = self.main[i].backward(gm, caches_main[i])
            grads.update({f"main.{i}.{k}": v for k, v in pg.items()})
        gs = g
        for i in reversed(range(len(self.shortcut))):
            gs, pg = self.shortcut[i].backward(gs, caches_short[i])
            grads.update({f"shortcut.{i}.{k}": v for k, v in pg.items()})
        return gm + gs, grads

    def config(self):
        d = {"type": self.type_name, "variant": self.variant, "channels": self.channels,
             "stride": self.stride, "bias": self.bias}
        if self.weighted:
            d["weighted"] = True
        return d


def build_layer(d: dict) -> Module:
    """Module from a config mapping such as ``{"type": "conv3x3", "filters": 16}``."""
    d = dict(d)
    kind = d.pop("type", None)
    try:
        if kind == "conv1x1":
            return Conv1x1(**d)
        if kind == "conv3x3":
            return Conv3x3(**d)
        if kind == "batchnorm":
            return BatchNorm(**d)
        if kind == "relu":
            return ReLU(**d)
        if kind == "gap":
            return GAP(**d)
        if kind == "dense":
            return Dense(**d)
        if kind == "squeeze_excite":
            return SqueezeExcite(**d)
        if kind == "subsample":
            return Subsample(**d)
        if kind == "residual_block":
            return ResidualBlock(**d)
        if kind in {k.value for k in LayerKind}:
            return WHT(kind, **d)
    except TypeError as exc:
        raise ConfigError(f"bad options for layer {kind!r}: {exc}") from None
    raise ConfigError(f"unknown layer type {kind!r}")
