"""The eight acceptance criteria, each at its stated tolerance and time budget.

Every test records a short ``detail`` string; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

import test_layers as oracles
from whtnet.bench import bench
from whtnet.cli import main, wht_reduction
from whtnet.config import load_config
from whtnet.gradcheck import (
    LAYER_CASES,
    layer_suite,
    model_suite,
    smooth_suite,
    weighted_edge_suite,
    weighted_suite,
)
from whtnet.layers import LayerConfig, LayerKind, param_count
from whtnet.nn.model import model_from_spec
from whtnet.nn.train import train
from whtnet.opcount import OpCounter
from whtnet.transform import (
    WalshSpec,
    bit_reversal_permutation,
    dense_transform,
    fwht,
    fwht_1d,
    gray_code_permutation,
    hadamard_matrix,
    walsh_matrix,
)

from conftest import CONFIGS

SEEDS = (0, 1, 2)


def sign_changes(row):
    return int(np.count_nonzero(row[1:] != row[:-1]))


@pytest.mark.acceptance(1, "transform matches dense matrices; involution")
def test_transform_correctness(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    dense_err = 0.0
    for k in range(7):
        for ordering, mat in (("hadamard", hadamard_matrix(k)), ("sequency", walsh_matrix(k))):
            spec = WalshSpec(k, ordering, "none")
            for x in rng.normal(size=(1000, 1 << k)):
                dense_err = max(dense_err, np.abs(fwht_1d(x, spec) - mat @ x).max())
    inv_err = 0.0
    for k in range(11):
        for ordering in ("hadamard", "sequency"):
            spec = WalshSpec(k, ordering, "orthonormal")
            for x in rng.normal(size=(20, 1 << k)):
                back = fwht_1d(fwht_1d(x, spec), spec)
                inv_err = max(inv_err, np.linalg.norm(back - x) / np.linalg.norm(x))
    seconds = time.perf_counter() - start
    record_property("detail", f"dense err {dense_err:.1e}, involution rel err {inv_err:.1e}, "
                              f"{seconds:.1f} s")
    assert dense_err <= 1e-9
    assert inv_err <= 1e-10
    assert seconds < 10


@pytest.mark.acceptance(2, "row j of the sequency matrix has j sign changes")
def test_sequency_property(record_property):
    for k in range(9):
        W = walsh_matrix(k)
        assert [sign_changes(r) for r in W] == list(range(1 << k))
        # bit-reversal of the Gray-code index picks the natural-order row
        assert np.array_equal(W, hadamard_matrix(k)[bit_reversal_permutation(k)[
            gray_code_permutation(k)]])
    record_property("detail", "k = 0..8 exhaustive")


@pytest.mark.acceptance(3, "analytic gradients match central differences")
def test_gradient_fidelity(record_property):
    start = time.perf_counter()
    scalar = [smooth_suite(), weighted_suite(), weighted_edge_suite()]
    layers = [layer_suite(kind) for kind in LAYER_CASES]
    model = model_suite()
    seconds = time.perf_counter() - start
    worst_scalar = max(r.max_rel_err for r in scalar + layers)
    record_property("detail", f"pointwise max {worst_scalar:.1e} over "
                              f"{min(r.points for r in scalar)} points per suite, "
                              f"model {model.max_rel_err:.1e}, {seconds:.1f} s")
    assert all(r.points == 10_000 for r in scalar)
    assert worst_scalar < 1e-5
    assert model.max_rel_err < 1e-4
    assert seconds < 30


@pytest.mark.acceptance(4, "layers equal their dense composite oracles")
def test_composite_equivalence(record_property):
    oracles.test_fwht_expand_oracle(6, 2)
    oracles.test_fwht_expand_oracle(12, oracles.Fraction(4, 3))
    oracles.test_fwht_project_oracle(16, 4)
    oracles.test_fwht_project_oracle(12, 2)
    oracles.test_bwht_expand_oracle(10, 4, oracles.Fraction(8, 5))
    oracles.test_bwht_expand_oracle(64, 16, 4)
    oracles.test_bwht_project_oracle(16, 8, 4)
    oracles.test_bwht_project_oracle(12, 4, 3)
    for residual in (False, True):
        for weighted in (False, True):
            oracles.test_fwht2d_oracle(5, 2, weighted, residual)
            oracles.test_fwht2d_oracle(8, 8, weighted, residual)
    oracles.test_expand_with_huge_thresholds_keeps_only_the_mean()
    oracles.test_project_uses_dc_not_threshold()
    oracles.test_fwht2d_dc_restored_under_huge_thresholds()
    record_property("detail", f"5 layer kinds within {oracles.TOL:g}, DC paths included")


@pytest.mark.acceptance(5, "parameter counts")
def test_parameter_counts(record_property):
    counts = {
        "fwht 1024": param_count(LayerConfig(LayerKind.FWHT_EXPAND, 1024, 1))[0],
        "bwht s=32": param_count(LayerConfig(LayerKind.BWHT_EXPAND, 32, 1, block_size=32))[0],
        "2d 3x3": param_count(LayerConfig(LayerKind.FWHT2D, 1280, spatial_dims=(3, 3)))[0],
    }
    weighted = param_count(LayerConfig(LayerKind.FWHT2D, 1280, weighted=True,
                                       spatial_dims=(3, 3)))
    resnet = model_from_spec({"input_shape": [32, 32, 3], "preset": "resnet20"})
    record_property("detail", f"{counts}, weighted 2d {weighted}, "
                              f"resnet20 {resnet.trainable_count()}")
    assert counts == {"fwht 1024": 1023, "bwht s=32": 31, "2d 3x3": 16}
    assert weighted == (32, 11_520)
    assert resnet.trainable_count() == 273_066


def run_variant(variant, seed):
    cfg = load_config(CONFIGS / f"mnist_{variant}.yaml")
    cfg.seed = cfg.train.seed = seed
    data = cfg.dataset.load()
    model = model_from_spec(cfg.model, seed=seed)
    with threadpool_limits(limits=1):
        report = train(model, data, cfg.train)
    return cfg, model, report


@pytest.mark.slow
@pytest.mark.acceptance(6, "desk-scale MNIST replacement experiment")
def test_mnist_replacement(record_property):
    acc, params, seconds = {}, {}, {}
    reduction = None
    for variant in ("baseline", "bwht", "fwht2d_gap"):
        for seed in SEEDS:
            cfg, model, report = run_variant(variant, seed)
            assert cfg.train.epochs <= 5 and cfg.threads == 1
            acc[variant, seed] = report.final_test_accuracy
            seconds[variant, seed] = report.wall_clock_seconds
            params[variant] = model.trainable_count()
            if variant == "bwht":
                reduction = wht_reduction(model)["reduction_ratio"]
    mean = {v: np.mean([acc[v, s] for s in SEEDS]) for v in params}
    change = params["fwht2d_gap"] / params["baseline"] - 1
    record_property("detail", "mean acc " + ", ".join(f"{v} {a:.3f}" for v, a in mean.items())
                    + f"; baseline seeds {[round(acc['baseline', s], 3) for s in SEEDS]}"
                    + f"; bwht reduction {reduction:.4f}; 2d param change {change:+.2%}"
                    + f"; slowest baseline run {max(seconds['baseline', s] for s in SEEDS):.0f} s")
    assert all(acc["baseline", s] >= 0.90 for s in SEEDS)
    assert all(seconds["baseline", s] <= 15 * 60 for s in SEEDS)
    assert mean["bwht"] >= mean["baseline"] - 0.03
    assert reduction >= 0.90
    assert abs(change) < 0.005
    assert mean["fwht2d_gap"] >= mean["baseline"] - 0.01


@pytest.mark.acceptance(7, "benchmark op counts and 2D transform vs conv3x3 timing")
def test_benchmark_structure(record_property):
    start = time.perf_counter()
    n, w, h, c = dims = (10, 8, 8, 1024)
    x = np.random.default_rng(0).normal(size=dims)
    for axis in (1, 2):
        m = dims[axis]
        with OpCounter() as cnt:
            fwht(x, axis, normalization="none")
        assert cnt.as_dict() == {"butterfly_add": (x.size // m) * m * int(np.log2(m))}
        with OpCounter() as ref:
            dense_transform(x, axis, normalization="none")
        assert ref.total("_add") > cnt["butterfly_add"] and ref.total("_mul") > 0
    with threadpool_limits(limits=1):
        fast = bench("fwht2d", dims)
        conv = bench("conv3x3", dims)
    seconds = time.perf_counter() - start
    record_property("detail", f"fwht2d {fast.median_seconds * 1e3:.1f} ms vs conv3x3 "
                              f"{conv.median_seconds * 1e3:.1f} ms, {seconds:.0f} s")
    # forward and inverse 2-D transforms: four 1-D passes of log2(8) stages
    assert fast.op_counts["butterfly_add"] == 4 * n * w * h * c * 3
    assert conv.op_counts["matmul_mul"] == 9 * w * h * c * c * n
    assert fast.median_seconds <= conv.median_seconds
    assert seconds < 120


@pytest.mark.acceptance(8, "identical training runs write identical checkpoints")
def test_deterministic_checkpoints(tmp_path, record_property, capsys):
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(["train", "--config", str(CONFIGS / "synthetic.yaml"), "--threads", "1",
                     "--out", str(out), "--quiet"])
        assert code == 0, capsys.readouterr().err
        blobs.append((out / "model.ckpt").read_bytes())
    record_property("detail", f"{len(blobs[0])} bytes each, identical={blobs[0] == blobs[1]}")
    assert blobs[0] == blobs[1]
