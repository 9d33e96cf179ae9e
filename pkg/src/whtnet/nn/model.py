"""Sequential model with an explicit gradient tape."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from .modules import WHT, Dense, Module, build_layer


@dataclass
class GradTape:
    """Forward intermediates in execution order: ``(layer id, cache)`` pairs."""

    entries: list[tuple[str, object]] = field(default_factory=list)

    def record(self, op_id: str, cache) -> None:
        self.entries.append((op_id, cache))

    def __len__(self):
        return len(self.entries)


_DTYPES = {"float64": np.float64, "float32": np.float32}


class Model:
    def __init__(self, layers: list[Module], input_shape, seed: int = 0,
                 precision: str = "float64"):
        if precision not in _DTYPES:
            raise ConfigError(f"precision must be one of {sorted(_DTYPES)}")
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = int(seed)
        self.precision = precision
        self.dtype = _DTYPES[precision]
        self._build()

    def _build(self):
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise ConfigError("a model must end in exactly one dense classifier head")
        rng = np.random.default_rng(self.seed)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.build(shape, rng, self.dtype)
        if len(shape) != 1:
            raise ShapeError(f"classifier output must be a vector, got per-sample shape {shape}")
        self.output_shape = shape

    # -- execution --------------------------------------------------------

    def forward(self, x, training: bool = False):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != model input {self.input_shape}")
        tape = GradTape()
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x, training)
            tape.record(str(i), cache)
        return x, tape

    def backward(self, tape: GradTape, dout):
        """Replay ``tape`` in reverse; returns ``(d_input, {param name: grad})``."""
        grads: dict[str, np.ndarray] = {}
        g = np.asarray(dout, dtype=self.dtype)
        for op_id, cache in reversed(tape.entries):
            g, pg = self.layers[int(op_id)].backward(g, cache)
            for k, v in pg.items():
                name = f"{op_id}.{k}"
                if name in grads:
                    raise RuntimeError(f"gradient for {name} produced twice")
                grads[name] = v
        return g, grads

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        outs = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def after_step(self) -> None:
        for layer in self.layers:
            layer.after_step()

    # -- state --------------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"{i}."))
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_buffers(f"{i}."))
        return out

    def frozen(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_frozen(f"{i}."))
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.state()
        missing = set(own) - set(tensors)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)[:5]}")
        for k, arr in own.items():
            src = np.asarray(tensors[k])
            if src.shape != arr.shape:
                raise ShapeError(f"{k}: checkpoint shape {src.shape} != {arr.shape}")
            arr[...] = src

    def trainable_count(self) -> int:
        return sum(layer.trainable_count() for layer in self.layers)

    def non_trainable_count(self) -> int:
        return sum(layer.non_trainable_count() for layer in self.layers)

    def summary(self) -> list[dict]:
        rows = []
        for i, layer in enumerate(self.layers):
            rows.append({
                "index": i,
                "type": layer.type_name,
                "output_shape": list(layer.out_shape),
                "trainable": layer.trainable_count(),
                "non_trainable": layer.non_trainable_count(),
            })
        return rows

    def wht_layers(self) -> list[WHT]:
        found = []

        def walk(m):
            if isinstance(m, WHT):
                found.append(m)
            for _, c in m.children():
                walk(c)

        for layer in self.layers:
            walk(layer)
        return found

    def spec(self) -> dict:
        return {"input_shape": list(self.input_shape), "seed": self.seed,
                "precision": self.precision,
                "layers": [layer.config() for layer in self.layers]}


# -- builders -------------------------------------------------------------


def resnet20_layers(variant: str = "original", wht_before_gap: str | None = None,
                    num_classes: int = 10, weighted: bool = False) -> list[dict]:
    """Layer list of the CIFAR-10 ResNet-20 (three stages of three blocks, 16/32/64 filters).

    Convolutions carry biases and every 3x3 convolution is followed by batch
    norm; shortcuts have no batch norm. ``wht_before_gap`` inserts a residual
    2D transform layer plus batch norm before pooling (``"plain"`` or
    ``"weighted"``).
    """
    layers: list[dict] = [
        {"type": "conv3x3", "filters": 16, "stride": 1, "bias": True},
        {"type": "batchnorm"}, {"type": "relu"},
    ]
    for channels, first_stride in ((16, 1), (32, 2), (64, 2)):
        for b in range(3):
            block = {"type": "residual_block", "variant": variant, "channels": channels,
                     "stride": first_stride if b == 0 else 1, "bias": True}
            if weighted:
                block["weighted"] = True
            layers.append(block)
    if wht_before_gap is not None:
        if wht_before_gap not in ("plain", "weighted"):
            raise ConfigError("wht_before_gap must be 'plain' or 'weighted'")
        layers.append({"type": "fwht2d", "residual": True,
                       "weighted": wht_before_gap == "weighted"})
        layers.append({"type": "batchnorm"})
    layers += [{"type": "gap"}, {"type": "dense", "units": num_classes}]
    return layers


def small_cnn_layers(variant: str = "baseline", num_classes: int = 10) -> list[dict]:
    """Desk-scale digit classifier used for the replacement experiments.

    ``baseline`` ends in a 64->256 1x1 convolution before pooling; ``bwht``
    swaps that convolution for a block transform layer (block 16, factor 4);
    ``fwht2d_gap`` keeps the baseline and inserts a weighted residual 2D
    transform layer before pooling.
    """
    if variant not in ("baseline", "bwht", "fwht2d_gap"):
        raise ConfigError(f"unknown small_cnn variant {variant!r}")
    # short runs take too few steps for the usual 0.99 running-stat momentum
    bn = {"type": "batchnorm", "momentum": 0.9}
    layers: list[dict] = [
        {"type": "conv3x3", "filters": 16, "stride": 1}, bn, {"type": "relu"},
        {"type": "conv3x3", "filters": 32, "stride": 2}, bn, {"type": "relu"},
        {"type": "conv3x3", "filters": 64, "stride": 2}, bn, {"type": "relu"},
    ]
    if variant == "bwht":
        layers.append({"type": "bwht_expand", "t": 4, "block_size": 16})
    else:
        layers.append({"type": "conv1x1", "filters": 256})
    layers += [bn, {"type": "relu"}]
    if variant == "fwht2d_gap":
        layers.append({"type": "fwht2d", "residual": True, "weighted": True})
    layers += [{"type": "gap"}, {"type": "dense", "units": num_classes}]
    return layers


PRESETS = {"resnet20": resnet20_layers, "small_cnn": small_cnn_layers}


def model_from_spec(spec: dict, seed: int | None = None) -> Model:
    """Build a model from a mapping with ``input_shape`` and ``layers`` (or ``preset``).

    ``seed`` overrides any seed given in the mapping.
    """
    spec = dict(spec)
    if "input_shape" not in spec:
        raise ConfigError("model spec needs input_shape")
    if "preset" in spec:
        preset = spec.pop("preset")
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        options = spec.pop("options", {}) or {}
        try:
            layer_dicts = PRESETS[preset](**options)
        except TypeError as exc:
            raise ConfigError(f"bad preset options: {exc}") from None
    else:
        layer_dicts = spec.get("layers")
        if not layer_dicts:
            raise ConfigError("model spec needs layers or a preset")
    layers = [build_layer(d) for d in layer_dicts]
    return Model(layers, spec["input_shape"],
                 seed=spec.get("seed", 0) if seed is None else seed,
                 precision=spec.get("precision", "float64"))
