"""Acceptance gate: every promise the library makes, pinned to a tolerance.

Each numbered test locks one guarantee: operator identities against dense
oracles, the cost profile of the iteration map, recoverability of clipped
cells, fidelity of the optimized fit to naive dense references, the
qualitative orderings of the simulation study, and the factor and metric
oracles.  The simulation grid (tests 08*) runs once per session through a
module fixture and takes several minutes; everything else is fast.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from cofactor.adaptive_impute import FitConfig, adaptive_impute
from cofactor.cli import bench_instance, bench_iteration
from cofactor.cosbm_sim import SimConfig, aggregate_rows, coupon_check, run_grid
from cofactor.dense_reference import dense_fit
from cofactor.eval_metrics import factor_rmse, sin_theta
from cofactor.graph_store import (
    PartialAdjacency,
    clip,
    identifiability_rank,
    nystrom_reconstruct,
)
from cofactor.implicit_op import ImpliedMatrix
from cofactor.svd_engine import LowRankFactors
from cofactor.varimax_factors import build_cofactors, varimax_rotation, varimax_value


def orthonormal(rng, n, k):
    q, _ = np.linalg.qr(rng.normal(size=(n, k)))
    return q


def random_factors(rng, n, k) -> LowRankFactors:
    d = np.sort(rng.uniform(0.5, 3.0, k))[::-1] * np.sqrt(n)
    return LowRankFactors(orthonormal(rng, n, k), d, orthonormal(rng, n, k))


def random_instance(rng, n_max=50, k_max=5):
    """Count data on the upper triangle with a varied lower observed set."""
    n = int(rng.integers(20, n_max + 1))
    k = int(rng.integers(1, k_max + 1))
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < rng.uniform(0.2, 0.9)
    vals = rng.poisson(3.0, int(keep.sum())) + 1.0
    il, jl = np.tril_indices(n)
    mode = int(rng.integers(3))
    if mode == 0:
        low = il == jl
    elif mode == 1:
        low = (il == jl) | (rng.random(il.size) < 0.3)
    else:
        low = np.zeros(il.size, dtype=bool)
    adj = PartialAdjacency(n, iu[keep], ju[keep], vals,
                           lower_rows=il[low], lower_cols=jl[low])
    if mode == 1 and rng.random() < 0.5:
        adj = clip(adj, int(rng.integers(1, n // 4 + 1)))
    z = None if rng.random() < 0.2 else random_factors(rng, n, k)
    return adj, z, k


def planted(rng, n, k, scale=10.0) -> PartialAdjacency:
    """Blockmodel counts observed above the diagonal, zeros on it."""
    zl = rng.integers(0, k, n)
    yl = rng.integers(0, k, n)
    b = np.full((k, k), 0.1) + 0.5 * np.eye(k)
    expected = b[zl][:, yl] * scale / np.sqrt(n)
    a = rng.poisson(expected).astype(float)
    iu, ju = np.triu_indices(n, k=1)
    vals = a[iu, ju]
    nz = vals > 0
    diag = np.arange(n)
    return PartialAdjacency(n, iu[nz], ju[nz], vals[nz],
                            lower_rows=diag, lower_cols=diag)


def test_01_implied_operator_matches_dense_oracle():
    rng = np.random.default_rng(1001)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        adj, z, _ = random_instance(rng)
        op = ImpliedMatrix(adj, z)
        dense = op.dense_oracle()
        x = rng.normal(size=adj.n)
        y = rng.normal(size=adj.n)
        worst = max(worst,
                    float(np.max(np.abs(op.matvec(x) - dense @ x))),
                    float(np.max(np.abs(op.rmatvec(y) - dense.T @ y))))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-10
    assert elapsed < 10.0


def test_02_debias_level_matches_trailing_spectrum():
    rng = np.random.default_rng(1002)
    start = time.perf_counter()
    for _ in range(100):
        adj, z, k = random_instance(rng, n_max=100)
        op = ImpliedMatrix(adj, z)
        s = np.linalg.svd(op.dense_oracle(), compute_uv=False)
        want = float(np.sum(np.square(s[k:], dtype=np.longdouble)) / (adj.n - k))
        assert op.alpha(s[:k] ** 2) == pytest.approx(want, rel=1e-8)
    assert time.perf_counter() - start < 30.0


def _best_iteration_seconds(variant, n, k=10, per_row=40, repeats=3):
    adj, z = bench_instance(n, k, per_row, seed=0)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        bench_iteration(variant, adj, z, k)
        best = min(best, time.perf_counter() - t0)
    return best


def test_03_iteration_cost_scales_below_quadratic():
    # fixed k and per-row nonzeros: doubling n should roughly double the
    # implicit iteration, while the materialized path grows like n^2.
    # sizes start where the dense matrix outgrows the L3 cache
    sizes = (2500, 5000, 10000)
    implicit = [_best_iteration_seconds("implicit", n, repeats=5) for n in sizes]
    dense = [_best_iteration_seconds("dense", n) for n in sizes]
    for small, big in zip(implicit, implicit[1:]):
        assert big / small <= 2.5, implicit
    for small, big in zip(dense, dense[1:]):
        assert big / small >= 3.5, dense


def test_04_low_rank_completion_recovers_identified_cells():
    rng = np.random.default_rng(1004)
    for _ in range(50):
        n = int(rng.integers(40, 201))
        k = int(rng.integers(1, 6))
        ell = int(rng.integers(k + 2, max(k + 3, n // 4)))
        z = np.exp(rng.normal(size=(n, k)))
        y = np.exp(rng.normal(size=(n, k)))
        b = rng.uniform(0.5, 1.5, (k, k)) + k * np.eye(k)
        a = z @ b @ y.T
        assert identifiability_rank(a, ell) == k
        recon, r0, c0 = nystrom_reconstruct(a, ell)
        truth = a[r0:r0 + recon.shape[0], c0:c0 + recon.shape[1]]
        rel = float(np.max(np.abs(recon - truth)) / np.max(np.abs(truth)))
        assert rel <= 1e-8


def test_05_identifiability_probability_at_coupon_threshold():
    cfg = SimConfig(n=500, k=5, delta=20)
    ell = int(np.ceil(2 * cfg.k * np.log(cfg.k)))
    assert ell == 17
    start = time.perf_counter()
    frac = coupon_check(cfg, ell=ell, reps=200)
    assert time.perf_counter() - start < 60.0
    assert frac >= 0.99, f"P(full rank at ell={ell}) = {frac}"


def test_06_optimized_fit_matches_dense_reference():
    for seed in (31, 32):
        rng = np.random.default_rng(seed)
        adj = planted(rng, 300, k=3)
        iters = 10
        cfg = FitConfig(k=3, epsilon=1e-30, max_iters=iters, seed=seed)
        fast, report = adaptive_impute(adj, cfg)
        ref, ref_alphas, _ = dense_fit(adj, 3, iters, seed=seed)
        assert report.n_iters == iters
        for got, want in zip(report.alphas, ref_alphas):
            assert got == pytest.approx(want, rel=1e-8)
        assert sin_theta(fast.U, ref.U) <= 1e-6
        assert sin_theta(fast.V, ref.V) <= 1e-6


def test_07_fixed_alpha_matches_soft_impute_reference():
    rng = np.random.default_rng(41)
    adj = planted(rng, 100, k=2)
    s = np.linalg.svd(adj.sparse().toarray(), compute_uv=False)
    alpha = float(0.25 * s[1] ** 2)
    iters = 10
    cfg = FitConfig(k=2, epsilon=1e-30, max_iters=iters, seed=7,
                    fixed_alpha=alpha)
    fast, report = adaptive_impute(adj, cfg)
    ref, ref_alphas, _ = dense_fit(adj, 2, iters, seed=7, fixed_alpha=alpha)
    assert report.n_iters == iters
    for got, want in zip(report.alphas, ref_alphas):
        assert got == pytest.approx(want, rel=1e-8)
    assert sin_theta(fast.U, ref.U) <= 1e-6
    assert sin_theta(fast.V, ref.V) <= 1e-6


GRID = dict(ns=(1000, 2000), ks=(2, 5), deltas=(20, 40, 80, 160), reps=20)


@pytest.fixture(scope="module")
def grid_cells():
    start = time.perf_counter()
    rows, failures = run_grid(GRID["ns"], GRID["ks"], GRID["deltas"],
                              GRID["reps"], seed=0, threads=1)
    elapsed = time.perf_counter() - start
    assert not failures, failures[:3]
    cells = {}
    for agg in aggregate_rows(rows):
        assert agg["reps"] == GRID["reps"]
        cells[(agg["n"], agg["k"], agg["delta"], agg["estimator"])] = agg
    return cells, elapsed


def test_08a_losses_fall_as_signal_grows(grid_cells):
    cells, _ = grid_cells
    for n, k in itertools.product(GRID["ns"], GRID["ks"]):
        for field in ("subspace_loss_mean", "factor_rmse_mean"):
            seq = [cells[(n, k, d, "adaptive_impute")][field]
                   for d in GRID["deltas"]]
            assert all(a > b for a, b in zip(seq, seq[1:])), (n, k, field, seq)


def test_08b_estimator_ordering_at_moderate_signal(grid_cells):
    cells, _ = grid_cells
    for n, k in itertools.product(GRID["ns"], GRID["ks"]):
        for d in (40, 80, 160):
            loss = {est: cells[(n, k, d, est)]["subspace_loss_mean"]
                    for est in ("oracle", "adaptive_impute",
                                "symmetrized", "zero_imputed")}
            assert loss["oracle"] < loss["adaptive_impute"] \
                < loss["symmetrized"] < loss["zero_imputed"], (n, k, d, loss)


def test_08c_symmetrized_always_beats_zero_imputed(grid_cells):
    cells, _ = grid_cells
    for n, k in itertools.product(GRID["ns"], GRID["ks"]):
        for d in GRID["deltas"]:
            symm = cells[(n, k, d, "symmetrized")]["subspace_loss_mean"]
            zero = cells[(n, k, d, "zero_imputed")]["subspace_loss_mean"]
            assert symm < zero, (n, k, d, symm, zero)


def test_08d_grid_runtime_under_target(grid_cells):
    _, elapsed = grid_cells
    assert elapsed < 1800.0


def test_09_varimax_matches_angle_grid_and_reconstruction():
    rng = np.random.default_rng(1009)
    thetas = np.linspace(0.0, np.pi / 2, 20001)
    c, s = np.cos(thetas), np.sin(thetas)
    for case in range(40):
        n = int(rng.integers(20, 61))
        raw = rng.normal(size=(n, 2)) if case % 2 else np.exp(rng.normal(size=(n, 2)))
        u = orthonormal(rng, n, 2) if case % 3 else np.linalg.qr(raw)[0]
        r = varimax_rotation(u)
        got = varimax_value(u @ r)
        col1 = u[:, :1] * c - u[:, 1:] * s
        col2 = u[:, :1] * s + u[:, 1:] * c
        grid_best = 0.0
        for col in (col1, col2):
            sq = col ** 2
            grid_best += np.mean(sq ** 2, axis=0) - np.mean(sq, axis=0) ** 2
        assert abs(got - float(grid_best.max())) <= 1e-6
    for _ in range(25):
        n = int(rng.integers(30, 201))
        k = int(rng.integers(1, 7))
        fit = random_factors(rng, n, k)
        model = build_cofactors(fit)
        assert np.max(np.abs(model.reconstruct() - fit.reconstruct())) <= 1e-10


def test_10_sin_theta_matches_principal_angle_oracle():
    rng = np.random.default_rng(1010)
    for case in range(100):
        n = int(rng.integers(10, 61))
        k = int(rng.integers(1, min(7, n // 2)))
        u = orthonormal(rng, n, k)
        if case % 3 == 0:
            # nearby pair: the regime where naive angle recovery loses digits
            w, _ = np.linalg.qr(u + 1e-5 * rng.normal(size=u.shape))
        else:
            w = orthonormal(rng, n, k)
        want = float(np.linalg.norm(np.sin(subspace_angles(u, w))))
        assert sin_theta(u, w) == pytest.approx(want, abs=1e-10)


def brute_force_cost(z, z_hat):
    k = z.shape[1]
    best = np.inf
    for perm in itertools.permutations(range(k)):
        for signs in itertools.product([-1.0, 1.0], repeat=k):
            p = np.zeros((k, k))
            p[list(perm), np.arange(k)] = signs
            best = min(best, float(np.sum((z - z_hat @ p) ** 2)))
    return best


def test_10_factor_rmse_matches_exhaustive_oracle():
    rng = np.random.default_rng(1011)
    for _ in range(100):
        n = int(rng.integers(30, 81))
        z = np.exp(rng.normal(size=(n, 2)))
        y = np.exp(rng.normal(size=(n, 2)))
        perm = np.zeros((2, 2))
        perm[rng.permutation(2), np.arange(2)] = rng.choice([-1.0, 1.0], 2)
        z_hat = z @ perm + rng.uniform(0.02, 0.25) * rng.normal(size=(n, 2))
        perm2 = np.zeros((2, 2))
        perm2[rng.permutation(2), np.arange(2)] = rng.choice([-1.0, 1.0], 2)
        y_hat = y @ perm2 + rng.uniform(0.02, 0.25) * rng.normal(size=(n, 2))
        want = np.sqrt((brute_force_cost(z, z_hat)
                        + brute_force_cost(y, y_hat)) / (n * 2))
        assert factor_rmse(z, z_hat, y, y_hat) == pytest.approx(
            want, rel=1e-10, abs=1e-12)
