"""Central finite-difference checks of every analytic gradient.

Scalar suites compare the threshold derivatives pointwise on random samples,
skipping points within ``kink_band`` of ``|v*x| = T`` where the functions are
not differentiable. Layer and model suites compare whole gradient tensors with
a max-norm relative error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import LayerConfig, LayerKind, apply_layer, layer_backward
from .nn.model import Model, model_from_spec
from .nn.ops import softmax_xent
from .thresholding import (
    smooth_threshold,
    smooth_threshold_grad_T,
    smooth_threshold_grad_x,
    weighted_smooth_threshold,
    weighted_smooth_threshold_grads,
)

H = 1e-6
KINK_BAND = 1e-4
# below this magnitude pointwise errors are measured absolutely
SCALE_FLOOR = 1e-3


@dataclass
class GradcheckResult:
    name: str
    max_rel_err: float
    tol: float
    points: int

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)


def pointwise_rel_err(analytic, numeric, floor: float = SCALE_FLOOR) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def max_norm_rel_err(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def central_diff(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """Elementwise derivative of an elementwise ``f`` at ``x``."""
    return (f(x + h) - f(x - h)) / (2 * h)


def numeric_grad(loss, arr: np.ndarray, h: float = H) -> np.ndarray:
    """Gradient of scalar ``loss()`` w.r.t. ``arr``, perturbing ``arr`` in place."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss()
        flat[i] = old - h
        down = loss()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


# -- scalar threshold suites ----------------------------------------------


def _first_kept(mask: np.ndarray, n: int) -> np.ndarray:
    """Indices of the first ``n`` draws outside the kink band."""
    idx = np.flatnonzero(mask)[:n]
    if idx.size < n:
        raise ValueError(f"only {idx.size} of {mask.size} draws clear the kink band")
    return idx


def smooth_suite(n: int = 10_000, seed: int = 0, tol: float = 1e-5) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3, 3, 2 * n)
    T = rng.uniform(0, 1, 2 * n)
    keep = _first_kept(np.abs(np.abs(x) - T) > KINK_BAND, n)
    x, T = x[keep], T[keep]
    err_T = pointwise_rel_err(smooth_threshold_grad_T(x, T),
                              central_diff(lambda t: smooth_threshold(x, t), T))
    err_x = pointwise_rel_err(smooth_threshold_grad_x(x, T),
                              central_diff(lambda z: smooth_threshold(z, T), x))
    return GradcheckResult("smooth", float(max(err_T.max(), err_x.max())), tol, len(x))


def _weighted(name, x, T, v, tol, n):
    keep = _first_kept(np.abs(np.abs(v * x) - T) > KINK_BAND, n)
    x, T, v = x[keep], T[keep], v[keep]
    d_v, d_T, d_x = weighted_smooth_threshold_grads(x, T, v)
    errs = [
        pointwise_rel_err(d_v, central_diff(lambda w: weighted_smooth_threshold(x, T, w), v)),
        pointwise_rel_err(d_T, central_diff(lambda t: weighted_smooth_threshold(x, t, v), T)),
        pointwise_rel_err(d_x, central_diff(lambda z: weighted_smooth_threshold(z, T, v), x)),
    ]
    return GradcheckResult(name, float(max(e.max() for e in errs)), tol, len(x))


def weighted_suite(n: int = 10_000, seed: int = 0, tol: float = 1e-5) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    return _weighted("weighted", rng.uniform(-3, 3, 2 * n), rng.uniform(0, 1, 2 * n),
                     rng.uniform(0.01, 2, 2 * n), tol, n)


def weighted_edge_suite(n: int = 10_000, seed: int = 0, tol: float = 1e-5) -> GradcheckResult:
    """Weights just above zero, where the live region shrinks toward the kink."""
    rng = np.random.default_rng(seed)
    v = rng.uniform(10 * H, 1e-3, 2 * n)
    return _weighted("weighted_edge", rng.uniform(-3, 3, 2 * n), rng.uniform(0, 2e-3, 2 * n), v,
                     tol, n)


# -- layer suites -----------------------------------------------------------

LAYER_CASES = {
    "fwht_expand": (LayerConfig(LayerKind.FWHT_EXPAND, 6, 2), (2, 2, 2, 6)),
    "fwht_project": (LayerConfig(LayerKind.FWHT_PROJECT, 16, 2), (2, 2, 2, 16)),
    "bwht_expand": (LayerConfig(LayerKind.BWHT_EXPAND, 8, 2, block_size=4), (2, 2, 2, 8)),
    "bwht_project": (LayerConfig(LayerKind.BWHT_PROJECT, 16, 2, block_size=4), (2, 2, 2, 16)),
    "fwht2d": (LayerConfig(LayerKind.FWHT2D, 2, spatial_dims=(3, 3)), (2, 3, 3, 2)),
    "fwht2d_weighted_residual": (
        LayerConfig(LayerKind.FWHT2D, 2, residual=True, weighted=True, spatial_dims=(3, 3)),
        (2, 3, 3, 2)),
}


def layer_suite(kind: str, seed: int = 0, tol: float = 1e-6) -> GradcheckResult:
    """Input, threshold and weight gradients of one layer under a random linear loss."""
    cfg, shape = LAYER_CASES[kind]
    rng = np.random.default_rng(seed)
    params = cfg.init_params(rng)
    if params.v is not None:
        params.v[...] = rng.uniform(0.5, 1.5, params.v.shape)
    x = rng.normal(size=shape)
    out, tape = apply_layer(cfg, x, params)
    probe = rng.normal(size=out.shape)

    def loss():
        return float((apply_layer(cfg, x, params)[0] * probe).sum())

    dx, dT, dv = layer_backward(probe, tape)
    pairs = [(dx, x), (dT, params.T)] + ([(dv, params.v)] if dv is not None else [])
    err = max(max_norm_rel_err(a, numeric_grad(loss, arr)) for a, arr in pairs)
    return GradcheckResult(kind, err, tol, sum(arr.size for _, arr in pairs))


# -- full model ---------------------------------------------------------------

TOY_MODEL = {
    "input_shape": [3, 3, 4],
    "layers": [
        {"type": "bwht_expand", "t": 2, "block_size": 4},
        {"type": "fwht2d", "residual": True, "weighted": True},
        {"type": "gap"},
        {"type": "dense", "units": 3},
    ],
}


def model_suite(seed: int = 0, tol: float = 1e-4, model: Model | None = None) -> GradcheckResult:
    """Loss gradient w.r.t. every parameter of a small transform-layer network."""
    model = model or model_from_spec(TOY_MODEL, seed=seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(4,) + model.input_shape)
    y = rng.integers(0, model.output_shape[0], size=4)
    for name, p in model.parameters().items():
        if name.endswith(".v"):
            p[...] = rng.uniform(0.5, 1.5, p.shape)

    def loss():
        return softmax_xent(model.forward(x)[0], y)[0]

    logits, tape = model.forward(x)
    _, grads = model.backward(tape, softmax_xent(logits, y)[1])
    params = model.parameters()
    err = max(max_norm_rel_err(grads[k], numeric_grad(loss, params[k])) for k in params)
    return GradcheckResult("model", err, tol, sum(p.size for p in params.values()))


SCALAR_SUITES = {"smooth": smooth_suite, "weighted": weighted_suite,
                 "weighted_edge": weighted_edge_suite}
SCOPES = tuple(SCALAR_SUITES) + tuple(LAYER_CASES) + ("model",)


def run_scope(scope: str, seed: int = 0) -> list[GradcheckResult]:
    """``scope`` is a suite name, ``layers`` for every layer kind, or ``all``."""
    if scope in SCALAR_SUITES:
        return [SCALAR_SUITES[scope](seed=seed)]
    if scope in LAYER_CASES:
        return [layer_suite(scope, seed)]
    if scope == "model":
        return [model_suite(seed)]
    if scope == "layers":
        return [layer_suite(k, seed) for k in LAYER_CASES]
    if scope == "all":
        return [r for s in SCOPES for r in run_scope(s, seed)]
    raise ValueError(f"unknown gradcheck scope {scope!r}; expected one of "
                     f"{SCOPES + ('layers', 'all')}")
