"""Arithmetic-operation counters for the instrumented kernels.

Kernels call :func:`record` with the number of scalar operations each array
expression performs. Counting is off unless a :class:`OpCounter` is active,
so the hot path pays one context-variable lookup per vectorized expression.
"""

from __future__ import annotations

import contextvars
from collections import Counter

_active: contextvars.ContextVar["OpCounter | None"] = contextvars.ContextVar(
    "whtnet_opcounter", default=None
)


class OpCounter:
    """Accumulates operation counts by category while used as a context manager.

    Categories are free-form strings such as ``"butterfly_add"`` or
    ``"matmul_mul"``. Nested counters are supported; only the innermost one
    records.
    """

    def __init__(self):
        self.counts: Counter[str] = Counter()
        self._token = None

    def __enter__(self) -> "OpCounter":
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc):
        _active.reset(self._token)
        self._token = None

    def __getitem__(self, key: str) -> int:
        return self.counts[key]

    def total(self, suffix: str) -> int:
        """Sum of every category whose name ends with ``suffix`` (e.g. ``"_add"``)."""
        return sum(v for k, v in self.counts.items() if k.endswith(suffix))

    def as_dict(self) -> dict[str, int]:
        return dict(sorted(self.counts.items()))


def record(category: str, n: int) -> None:
    counter = _active.get()
    if counter is not None:
        counter.counts[category] += int(n)


def counting() -> bool:
    return _active.get() is not None
