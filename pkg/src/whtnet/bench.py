"""Forward-pass microbenchmarks of transform layers against convolution baselines."""

from __future__ import annotations

import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .nn.modules import WHT, Conv1x1, Conv3x3, Module, SqueezeExcite
from .opcount import OpCounter

MIN_REPS = 20
MIN_WARMUP = 3


def _make(kind: str, c: int) -> Module:
    if kind == "fwht2d":
        return WHT("fwht2d")
    if kind == "fwht2d_weighted":
        return WHT("fwht2d", weighted=True, residual=True)
    if kind == "bwht":
        return WHT("bwht_expand", t=1, block_size=min(c, 32))
    if kind == "fwht":
        return WHT("fwht_expand", t=1)
    if kind == "conv3x3":
        return Conv3x3(c)
    if kind == "conv1x1":
        return Conv1x1(c)
    if kind == "squeeze_excite":
        return SqueezeExcite()
    raise ConfigError(f"unknown bench kind {kind!r}; expected one of {KINDS}")


KINDS = ("fwht2d", "fwht2d_weighted", "bwht", "fwht", "conv3x3", "conv1x1", "squeeze_excite")


@dataclass
class BenchResult:
    kind: str
    dims: tuple[int, int, int, int]
    median_seconds: float
    repetitions: int
    warmup: int
    adds: int
    muls: int
    params: int
    peak_bytes: int
    op_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d


def bench(kind: str, dims, repetitions: int = MIN_REPS, warmup: int = MIN_WARMUP,
          seed: int = 0, dtype=np.float64) -> BenchResult:
    """Median forward wall-clock of ``kind`` on an ``(n, w, h, c)`` input.

    Operation counts come from one instrumented call. ``peak_bytes`` is the
    traced allocation peak of a forward call plus the input tensor, i.e. the
    bytes of every array live at once while the layer runs.
    """
    if repetitions < MIN_REPS or warmup < MIN_WARMUP:
        raise ConfigError(f"need at least {MIN_REPS} repetitions after {MIN_WARMUP} warm-ups")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or min(dims) < 1:
        raise ConfigError(f"dims must be four positive integers n w h c, got {dims}")
    n, w, h, c = dims
    rng = np.random.default_rng(seed)
    layer = _make(kind, c)
    try:
        layer.build((w, h, c), rng, dtype)
    except ValueError as exc:
        raise ConfigError(f"{kind} cannot run on {dims}: {exc}") from None
    x = rng.normal(size=dims).astype(dtype)

    with OpCounter() as counter:
        layer.forward(x)
    tracemalloc.start()
    try:
        layer.forward(x)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()

    for _ in range(warmup):
        layer.forward(x)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        layer.forward(x)
        times.append(time.perf_counter() - t0)

    return BenchResult(kind, dims, statistics.median(times), repetitions, warmup,
                       counter.total("_add"), counter.total("_mul"), layer.trainable_count(),
                       int(peak + x.nbytes), counter.as_dict())
