from fractions import Fraction

import numpy as np
import pytest

from whtnet.errors import ConfigError, ShapeError
from whtnet.gradcheck import LAYER_CASES, layer_suite
from whtnet.layers import (
    LayerConfig,
    LayerKind,
    apply_layer,
    block_index_plan,
    bwht_expand,
    bwht_project,
    fwht2d_layer,
    fwht_expand,
    fwht_project,
    param_count,
    resample,
)
from whtnet.thresholding import ThresholdParams, init_threshold_params, weighted_smooth_threshold
from whtnet.transform import Ordering, walsh_matrix

TOL = 1e-9


def wn(m):
    """Orthonormal sequency-ordered transform matrix."""
    return walsh_matrix(int(np.log2(m))) / np.sqrt(m)


def shrink(y, params):
    """Thresholding of one coefficient vector or grid, DC untouched."""
    v = np.ones_like(params.T) if params.v is None else params.v
    out = weighted_smooth_threshold(y, params.T, v)
    return np.where(params.dc_mask, y, out)


def random_params(shape, rng, weighted=False):
    dc = (0, 0) if isinstance(shape, tuple) and len(shape) == 2 else 0
    p = init_threshold_params(shape, rng, weighted, dc_index=dc)
    if weighted:
        p.v[...] = rng.uniform(0.5, 1.5, p.v.shape)
    return p


def per_fiber(x, fn):
    flat = x.reshape(-1, x.shape[-1])
    return np.stack([fn(f) for f in flat]).reshape(x.shape[:-1] + (-1,))


# -- dense composite oracles -----------------------------------------------------


@pytest.mark.parametrize("c,t", [(8, 1), (6, 2), (5, 3), (16, 2), (12, Fraction(4, 3))])
def test_fwht_expand_oracle(c, t):
    rng = np.random.default_rng(c)
    tc = int(c * Fraction(t))
    m = 1 << int(np.ceil(np.log2(max(c, tc))))
    x = rng.normal(size=(2, 3, 2, c))
    p = random_params(m, rng)
    pad = np.eye(m)[:, :c]
    keep = np.eye(m)[:tc]
    want = per_fiber(x, lambda f: keep @ wn(m) @ shrink(wn(m) @ pad @ f, p))
    got, _ = fwht_expand(x, p, t)
    np.testing.assert_allclose(got, want, atol=TOL)


@pytest.mark.parametrize("tc,t", [(16, 2), (16, 4), (12, 2), (32, 8), (8, 1)])
def test_fwht_project_oracle(tc, t):
    rng = np.random.default_rng(tc + t)
    c = tc // t
    M = 1 << int(np.ceil(np.log2(tc)))
    m = 1 << int(np.ceil(np.log2(c)))
    r = M // m
    x = rng.normal(size=(3, tc))
    p = random_params(M, rng)
    pool = np.zeros((m, M))
    for j in range(1, m):
        pool[j, 1 + (j - 1) * r:1 + j * r] = 1.0 / r

    def oracle(f):
        y = wn(M) @ np.concatenate([f, np.zeros(M - tc)])
        yhat = pool @ shrink(y, p)
        yhat[0] = y[0] / r
        return (wn(m) @ yhat)[:c]

    got, _ = fwht_project(x, p, t)
    np.testing.assert_allclose(got, per_fiber(x, oracle), atol=TOL)


def float_starts(c, s, t):
    n = int(c * Fraction(t) // s)
    return np.floor(np.linspace(0, c - s, n) + 1e-9).astype(int)


@pytest.mark.parametrize("c,s,t", [(8, 4, 2), (8, 8, 1), (12, 4, 2), (10, 4, Fraction(8, 5)),
                                   (16, 4, 4), (64, 16, 4)])
def test_bwht_expand_oracle(c, s, t):
    rng = np.random.default_rng(c * s)
    x = rng.normal(size=(2, 2, c))
    p = random_params(s, rng)

    def oracle(f):
        return np.concatenate([wn(s) @ shrink(wn(s) @ f[k:k + s], p)
                               for k in float_starts(c, s, t)])

    got, _ = bwht_expand(x, p, s, t)
    np.testing.assert_allclose(got, per_fiber(x, oracle), atol=TOL)


@pytest.mark.parametrize("tc,s,t", [(16, 4, 2), (16, 8, 4), (32, 32, 2), (12, 4, 3)])
def test_bwht_project_oracle(tc, s, t):
    rng = np.random.default_rng(tc * s + t)
    x = rng.normal(size=(2, 3, tc))
    p = random_params(s, rng)
    avg = np.kron(np.eye(tc // t), np.full((1, t), 1.0 / t))

    def oracle(f):
        blocks = [wn(s) @ shrink(wn(s) @ f[k:k + s], p) for k in range(0, tc, s)]
        return avg @ np.concatenate(blocks)

    got, _ = bwht_project(x, p, s, t)
    np.testing.assert_allclose(got, per_fiber(x, oracle), atol=TOL)


@pytest.mark.parametrize("w,h", [(4, 4), (3, 3), (5, 2), (7, 7), (8, 1)])
@pytest.mark.parametrize("weighted", [False, True])
@pytest.mark.parametrize("residual", [False, True])
def test_fwht2d_oracle(w, h, weighted, residual):
    rng = np.random.default_rng(w * 10 + h)
    P = 1 << int(np.ceil(np.log2(w)))
    Q = 1 << int(np.ceil(np.log2(h)))
    x = rng.normal(size=(2, w, h, 3))
    p = random_params((P, Q), rng, weighted)
    want = np.empty_like(x)
    for n in range(2):
        for ch in range(3):
            X = np.zeros((P, Q))
            X[:w, :h] = x[n, :, :, ch]
            Y = wn(P) @ X @ wn(Q).T
            Z = wn(P) @ shrink(Y, p) @ wn(Q).T
            want[n, :, :, ch] = Z[:w, :h] + (x[n, :, :, ch] if residual else 0)
    got, _ = fwht2d_layer(x, p, residual)
    np.testing.assert_allclose(got, want, atol=TOL)


# -- structural properties -------------------------------------------------------


def test_expand_with_huge_thresholds_keeps_only_the_mean():
    x = np.random.default_rng(0).normal(size=(4, 16))
    p = init_threshold_params(16, np.random.default_rng(1))
    p.T[1:] = 1e6
    z, _ = fwht_expand(x, p, 1)
    np.testing.assert_allclose(z, np.repeat(x.mean(axis=1, keepdims=True), 16, axis=1),
                               atol=1e-12)


def test_fwht2d_dc_restored_under_huge_thresholds():
    x = np.random.default_rng(2).normal(size=(2, 4, 4, 3))
    p = init_threshold_params((4, 4), np.random.default_rng(3), dc_index=(0, 0))
    p.T[...] = 1e6
    z, _ = fwht2d_layer(x, p)
    want = np.broadcast_to(x.mean(axis=(1, 2), keepdims=True), x.shape)
    np.testing.assert_allclose(z, want, atol=1e-12)


def test_residual_adds_input():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 5, 6, 2))
    p = random_params((8, 8), rng, weighted=True)
    plain, _ = fwht2d_layer(x, p, residual=False)
    res, _ = fwht2d_layer(x, p, residual=True)
    np.testing.assert_allclose(res - plain, x, atol=1e-14)


def test_project_uses_dc_not_threshold():
    x = np.random.default_rng(5).normal(size=(3, 16))
    p = init_threshold_params(16, np.random.default_rng(6))
    p.T[0] = 123.0  # DC threshold must be ignored
    a, _ = fwht_project(x, p, 2)
    p.T[0] = 0.0
    b, _ = fwht_project(x, p, 2)
    np.testing.assert_array_equal(a, b)


def test_hadamard_ordering_runs_and_differs():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 8))
    p = random_params(8, rng)
    s, _ = fwht_expand(x, p, 1, Ordering.SEQUENCY)
    h, _ = fwht_expand(x, p, 1, Ordering.HADAMARD)
    assert s.shape == h.shape and not np.allclose(s, h)


def test_float32_kept():
    x = np.ones((1, 2, 2, 8), dtype=np.float32)
    z, _ = bwht_expand(x, init_threshold_params(4, np.random.default_rng(0)), 4, 2)
    assert z.dtype == np.float32


# -- index plan -------------------------------------------------------------------


def test_block_plan_examples():
    np.testing.assert_array_equal(block_index_plan(8, 4, 2).starts, [0, 1, 2, 4])
    np.testing.assert_array_equal(block_index_plan(8, 4, 1).starts, [0, 4])
    np.testing.assert_array_equal(block_index_plan(32, 32, 1).starts, [0])


@pytest.mark.parametrize("c", range(4, 80, 3))
@pytest.mark.parametrize("t", [1, 2, 3])
def test_block_plan_is_exact_floor_of_linspace(c, t):
    s = 4
    n = c * t // s
    plan = block_index_plan(c, s, t)
    want = [int(Fraction(i * (c - s), n - 1)) if n > 1 else 0 for i in range(n)]
    np.testing.assert_array_equal(plan.starts, want)
    assert plan.starts[0] == 0 and plan.starts[-1] == (c - s if n > 1 else 0)
    assert np.all(np.diff(plan.starts) >= 0)


def test_resample_gathers_windows():
    x = np.arange(8.0)
    np.testing.assert_array_equal(resample(x, 4, 1), [[0, 1, 2, 3], [4, 5, 6, 7]])


# -- config, shapes and counts -------------------------------------------------------


@pytest.mark.parametrize("cfg,want", [
    (LayerConfig(LayerKind.FWHT_EXPAND, 1024, 1), (1023, 1024 * 1024)),
    (LayerConfig(LayerKind.BWHT_EXPAND, 32, 1, block_size=32), (31, 32 * 32)),
    (LayerConfig(LayerKind.FWHT2D, 1280, spatial_dims=(3, 3)), (16, 11520)),
    (LayerConfig(LayerKind.FWHT2D, 1280, weighted=True, spatial_dims=(3, 3)), (32, 11520)),
    (LayerConfig(LayerKind.FWHT2D, 64, spatial_dims=(4, 4)), (16, 576)),
    (LayerConfig(LayerKind.FWHT_PROJECT, 64, 4), (63, 64 * 16)),
    (LayerConfig(LayerKind.BWHT_PROJECT, 64, 2, block_size=16), (15, 64 * 32)),
])
def test_param_counts(cfg, want):
    assert param_count(cfg) == want


@pytest.mark.parametrize("cfg,shape,out", [
    (LayerConfig(LayerKind.FWHT_EXPAND, 6, 2), (2, 3, 3, 6), (2, 3, 3, 12)),
    (LayerConfig(LayerKind.FWHT_PROJECT, 12, 3), (1, 2, 2, 12), (1, 2, 2, 4)),
    (LayerConfig(LayerKind.BWHT_EXPAND, 64, 4, block_size=16), (1, 7, 7, 64), (1, 7, 7, 256)),
    (LayerConfig(LayerKind.BWHT_PROJECT, 64, 4, block_size=16), (1, 2, 2, 64), (1, 2, 2, 16)),
    (LayerConfig(LayerKind.FWHT2D, 5, spatial_dims=(7, 3)), (2, 7, 3, 5), (2, 7, 3, 5)),
])
def test_shapes(cfg, shape, out):
    assert cfg.out_channels == out[-1]
    params = cfg.init_params(np.random.default_rng(0))
    z, _ = apply_layer(cfg, np.zeros(shape), params)
    assert z.shape == out


@pytest.mark.parametrize("kwargs", [
    dict(kind=LayerKind.BWHT_EXPAND, in_channels=8, expansion_factor=2, block_size=3),
    dict(kind=LayerKind.BWHT_EXPAND, in_channels=4, expansion_factor=1, block_size=8),
    dict(kind=LayerKind.BWHT_EXPAND, in_channels=10, expansion_factor=1, block_size=4),
    dict(kind=LayerKind.BWHT_PROJECT, in_channels=12, expansion_factor=2, block_size=8),
    dict(kind=LayerKind.FWHT_EXPAND, in_channels=8, residual=True),
    dict(kind=LayerKind.FWHT2D, in_channels=8),
    dict(kind=LayerKind.FWHT_PROJECT, in_channels=6, expansion_factor=4),
    dict(kind=LayerKind.FWHT_EXPAND, in_channels=0),
])
def test_invalid_configs(kwargs):
    with pytest.raises((ConfigError, ShapeError)):
        LayerConfig(**kwargs)


def test_wrong_parameter_shape():
    with pytest.raises(ShapeError):
        fwht_expand(np.ones((1, 8)), init_threshold_params(4, np.random.default_rng(0)), 1)
    with pytest.raises(ShapeError):
        fwht2d_layer(np.ones((1, 4, 4, 1)), ThresholdParams(np.zeros((4, 4))))


def test_config_round_trip():
    for cfg, _ in LAYER_CASES.values():
        assert LayerConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        LayerConfig.from_dict({"kind": "fwht_expand", "in_channels": 4, "bogus": 1})


@pytest.mark.parametrize("kind", sorted(LAYER_CASES))
@pytest.mark.parametrize("seed", [0, 1])
def test_backward_matches_finite_differences(kind, seed):
    r = layer_suite(kind, seed)
    assert r.passed, r
