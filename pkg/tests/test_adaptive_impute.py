import numpy as np
import pytest

from cofactor.adaptive_impute import (
    FitConfig,
    FitError,
    FitReport,
    adaptive_impute,
    adaptive_initialize,
    gram_operators,
    rel_change_sq,
)
from cofactor.dense_reference import dense_fit, dense_initialize
from cofactor.graph_store import PartialAdjacency
from cofactor.implicit_op import ImpliedMatrix
from cofactor.svd_engine import LowRankFactors, truncated_svd


def subspace_gap(a, b):
    s = np.clip(np.linalg.svd(a.T @ b, compute_uv=False), 0.0, 1.0)
    return float(np.sqrt(np.sum(1.0 - s**2)))


def planted_instance(rng, n=80, k=2, scale=8.0):
    """Chronologically masked Poisson blockmodel draw with planted rank k."""
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


def fully_observed(a):
    rows, cols = np.nonzero(a)
    return PartialAdjacency(a.shape[0], rows, cols, a[rows, cols])


def test_gram_operator_matches_dense():
    rng = np.random.default_rng(30)
    adj = planted_instance(rng, n=20)
    sigma_v, sigma_u, p_hat = gram_operators(adj)
    a = adj.sparse().toarray()
    ata, aat = a.T @ a, a @ a.T
    dv = ata - (1 - p_hat) * np.diag(np.diag(ata))
    du = aat - (1 - p_hat) * np.diag(np.diag(aat))
    for _ in range(5):
        x = rng.normal(size=20)
        assert np.max(np.abs(sigma_v.matvec(x) - dv @ x)) <= 1e-10
        assert np.max(np.abs(sigma_u.matvec(x) - du @ x)) <= 1e-10


def test_initializer_fully_observed_matches_plain_svd():
    rng = np.random.default_rng(31)
    n, k = 30, 3
    a = rng.random((n, k)) @ rng.random((k, n)) + rng.random((n, n)) * 0.01
    adj = fully_observed(a)
    assert adj.n_observed == n * n  # p_hat = 1, correction vanishes
    init = adaptive_initialize(adj, k, seed=0)
    u, s, vt = np.linalg.svd(a)
    assert subspace_gap(init.U, u[:, :k]) <= 1e-6
    assert subspace_gap(init.V, vt[:k].T) <= 1e-6


def test_initializer_agrees_with_dense_reference():
    rng = np.random.default_rng(32)
    adj = planted_instance(rng, n=60)
    fast = adaptive_initialize(adj, 2, seed=0)
    ref = dense_initialize(adj, 2, seed=0)
    np.testing.assert_allclose(fast.D, ref.D, rtol=1e-8, atol=1e-10)
    assert subspace_gap(fast.U, ref.U) <= 1e-7
    assert subspace_gap(fast.V, ref.V) <= 1e-7
    # sign fold must leave the reconstructions equal, not just the subspaces
    rel = (np.linalg.norm(fast.reconstruct() - ref.reconstruct())
           / np.linalg.norm(ref.reconstruct()))
    assert rel <= 1e-7


def test_initializer_rejects_all_zero_data():
    adj = PartialAdjacency(10, [], [], [])
    with pytest.raises(FitError):
        adaptive_initialize(adj, 2)


def test_exact_rank_k_fully_observed_fixed_point():
    rng = np.random.default_rng(33)
    n, k = 40, 3
    a = rng.random((n, k)) @ rng.random((k, n))
    adj = fully_observed(a)
    factors, report = adaptive_impute(adj, FitConfig(k=k, epsilon=1e-10, seed=0))
    assert report.converged and report.n_iters <= 2
    assert abs(report.alphas[-1]) <= 1e-8 * np.sum(a**2)
    rel = np.linalg.norm(factors.reconstruct() - a) / np.linalg.norm(a)
    assert rel <= 1e-6


def test_shrinkage_never_inflates():
    rng = np.random.default_rng(34)
    adj = planted_instance(rng, n=60)
    z = adaptive_initialize(adj, 2, seed=1)
    for _ in range(5):
        implied = ImpliedMatrix(adj, z)
        f = truncated_svd(implied, 2, seed=1, v0=z.V[:, 0])
        alpha = implied.alpha(f.D**2)
        lam = np.sqrt(np.clip(f.D**2 - alpha, 0.0, None))
        assert np.all(lam <= f.D + 1e-9 * max(1.0, f.D[0]))
        z = LowRankFactors(f.U, lam, f.V)


def test_determinism_bit_identical_runs():
    rng = np.random.default_rng(35)
    adj = planted_instance(rng, n=50)
    cfg = FitConfig(k=2, epsilon=1e-8, max_iters=40, seed=7)
    f1, r1 = adaptive_impute(adj, cfg)
    f2, r2 = adaptive_impute(adj, FitConfig(k=2, epsilon=1e-8, max_iters=40, seed=7))
    assert r1.n_iters == r2.n_iters
    assert r1.alphas == r2.alphas
    assert np.max(np.abs(f1.U - f2.U)) <= 1e-12
    assert np.max(np.abs(f1.D - f2.D)) <= 1e-12
    assert np.max(np.abs(f1.V - f2.V)) <= 1e-12


def test_rel_change_identity_matches_dense():
    rng = np.random.default_rng(36)
    for _ in range(10):
        n, k = 25, 3
        mats = []
        for _ in range(2):
            q1, _ = np.linalg.qr(rng.normal(size=(n, k)))
            q2, _ = np.linalg.qr(rng.normal(size=(n, k)))
            d = np.sort(rng.random(k) * 3)[::-1]
            mats.append(LowRankFactors(q1, d, q2))
        z_new, z_old = mats
        diff_sq, new_sq = rel_change_sq(z_new, z_old)
        dense_diff = np.sum((z_new.reconstruct() - z_old.reconstruct()) ** 2)
        assert diff_sq == pytest.approx(float(dense_diff), rel=1e-10, abs=1e-12)
        assert new_sq == pytest.approx(float(np.sum(z_new.D**2)), rel=1e-12)


def test_matches_dense_reference_per_iteration():
    rng = np.random.default_rng(37)
    adj = planted_instance(rng, n=80)
    iters = 12
    cfg = FitConfig(k=2, epsilon=1e-30, max_iters=iters, seed=3)
    fast, report = adaptive_impute(adj, cfg)
    ref, ref_alphas, _ = dense_fit(adj, 2, iters, seed=3)
    assert report.n_iters == iters
    for got, want in zip(report.alphas, ref_alphas):
        assert got == pytest.approx(want, rel=1e-8, abs=1e-10)
    assert subspace_gap(fast.U, ref.U) <= 1e-6
    assert subspace_gap(fast.V, ref.V) <= 1e-6


def test_soft_impute_mode_matches_dense_reference():
    rng = np.random.default_rng(38)
    adj = planted_instance(rng, n=40)
    s = np.linalg.svd(adj.sparse().toarray(), compute_uv=False)
    alpha = float(0.25 * s[1] ** 2)
    iters = 10
    cfg = FitConfig(k=2, epsilon=1e-30, max_iters=iters, seed=5, fixed_alpha=alpha)
    fast, report = adaptive_impute(adj, cfg)
    assert report.alphas == [alpha] * iters
    ref, _, _ = dense_fit(adj, 2, iters, seed=5, fixed_alpha=alpha)
    assert subspace_gap(fast.U, ref.U) <= 1e-6
    assert subspace_gap(fast.V, ref.V) <= 1e-6
    np.testing.assert_allclose(fast.D, ref.D, rtol=1e-8, atol=1e-10)


def test_degenerate_when_everything_clamps():
    rng = np.random.default_rng(39)
    adj = planted_instance(rng, n=30)
    cfg = FitConfig(k=2, epsilon=1e-8, seed=0, fixed_alpha=1e9)
    with pytest.raises(FitError) as exc:
        adaptive_impute(adj, cfg)
    assert exc.value.report is not None
    assert exc.value.report.converged_to_zero


def test_config_validation():
    with pytest.raises(FitError):
        FitConfig(k=1).validate()
    with pytest.raises(FitError):
        FitConfig(k=2, epsilon=0.0).validate()
    with pytest.raises(FitError):
        FitConfig(k=2, max_iters=0).validate()


def test_fit_report_json_round_trip():
    rng = np.random.default_rng(40)
    adj = planted_instance(rng, n=40)
    _, report = adaptive_impute(adj, FitConfig(k=2, epsilon=1e-6, seed=2))
    again = FitReport.from_json(report.to_json())
    assert again == report
    again.check()
