import numpy as np
import pytest

from cofactor.graph_store import PartialAdjacency
from cofactor.implicit_op import ImpliedMatrix, frob_sq_upper
from cofactor.svd_engine import LowRankFactors


def random_instance(rng, n=None, k=None, with_z=True):
    """Mixed observation pattern: upper nonzeros, lower ties, lower zeros."""
    n = n or int(rng.integers(8, 51))
    k = k or int(rng.integers(1, 6))
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < 0.3
    rows, cols = iu[keep], ju[keep]
    vals = rng.integers(1, 5, keep.sum()).astype(float)

    il, jl = np.tril_indices(n, k=0)
    tie = rng.random(len(il)) < 0.05
    rows = np.concatenate([rows, il[tie]])
    cols = np.concatenate([cols, jl[tie]])
    vals = np.concatenate([vals, rng.integers(1, 3, tie.sum()).astype(float)])

    zero_cells = ~tie & (rng.random(len(il)) < 0.2)
    adj = PartialAdjacency(n, rows, cols, vals,
                           lower_rows=il[zero_cells], lower_cols=jl[zero_cells])
    z = None
    if with_z:
        qu, _ = np.linalg.qr(rng.normal(size=(n, k)))
        qv, _ = np.linalg.qr(rng.normal(size=(n, k)))
        d = np.sort(rng.random(k) * 5)[::-1]
        z = LowRankFactors(qu, d, qv)
    return adj, z


def test_matvec_rmatvec_match_dense_oracle():
    rng = np.random.default_rng(10)
    for _ in range(60):
        adj, z = random_instance(rng)
        m = ImpliedMatrix(adj, z)
        dense = m.dense_oracle()
        x = rng.normal(size=adj.n)
        y = rng.normal(size=adj.n)
        assert np.max(np.abs(m.matvec(x) - dense @ x)) <= 1e-10
        assert np.max(np.abs(m.rmatvec(y) - dense.T @ y)) <= 1e-10
        # adjoint identity
        assert abs(m.matvec(x) @ y - x @ m.rmatvec(y)) <= 1e-10 * max(
            1.0, abs(m.matvec(x) @ y))


def test_zero_factors_reduce_to_sparse_matvec():
    rng = np.random.default_rng(11)
    adj, _ = random_instance(rng, with_z=False)
    m = ImpliedMatrix(adj, None)
    x = rng.normal(size=adj.n)
    np.testing.assert_array_equal(m.matvec(x), adj.sparse() @ x)
    np.testing.assert_array_equal(m.rmatvec(x), adj.sparse().T @ x)


def test_zero_vector_maps_to_zero():
    rng = np.random.default_rng(12)
    adj, z = random_instance(rng)
    m = ImpliedMatrix(adj, z)
    np.testing.assert_array_equal(m.matvec(np.zeros(adj.n)), np.zeros(adj.n))


def test_buffers_reuse_gives_identical_results():
    rng = np.random.default_rng(13)
    adj, z = random_instance(rng)
    m = ImpliedMatrix(adj, z)
    buf = m.make_buffers()
    x = rng.normal(size=adj.n)
    np.testing.assert_array_equal(m.matvec(x, buf), m.matvec(x))
    np.testing.assert_array_equal(m.rmatvec(x, buf), m.rmatvec(x))


def test_input_validation():
    rng = np.random.default_rng(14)
    adj, z = random_instance(rng, n=10)
    m = ImpliedMatrix(adj, z)
    with pytest.raises(ValueError):
        m.matvec(np.zeros(11))
    with pytest.raises(ValueError):
        m.matvec(np.full(10, np.nan))
    skew = LowRankFactors(np.ones((10, 2)), np.array([1.0, 0.5]), np.ones((10, 2)))
    with pytest.raises(ValueError):
        ImpliedMatrix(adj, skew)


def test_frob_sq_upper_diagonal_z_is_zero():
    n, k = 12, 3
    u = np.zeros((n, k))
    u[:k, :k] = np.eye(k)
    z = LowRankFactors(u.copy(), np.array([3.0, 2.0, 1.0]), u.copy())
    assert frob_sq_upper(z) == pytest.approx(0.0, abs=1e-12)


def test_frob_sq_upper_rank_one_ones():
    n, sigma = 17, 2.5
    u = np.full((n, 1), 1 / np.sqrt(n))
    z = LowRankFactors(u, np.array([sigma]), u.copy())
    expected = sigma**2 * (n * (n - 1) / 2) / n**2
    assert frob_sq_upper(z) == pytest.approx(expected, rel=1e-12)


def test_frob_sq_upper_matches_dense():
    rng = np.random.default_rng(15)
    for _ in range(10):
        n, k = 20, 3
        qu, _ = np.linalg.qr(rng.normal(size=(n, k)))
        qv, _ = np.linalg.qr(rng.normal(size=(n, k)))
        d = np.sort(rng.random(k) * 4)[::-1]
        z = LowRankFactors(qu, d, qv)
        dense = z.reconstruct()
        expected = np.sum(np.triu(dense, 1) ** 2)
        assert frob_sq_upper(z) == pytest.approx(expected, abs=1e-10)
        # partition: strict upper plus lower-with-diagonal recovers ||Z||_F^2
        lower = np.sum(np.tril(dense, 0) ** 2)
        assert frob_sq_upper(z) + lower == pytest.approx(float(np.sum(d**2)),
                                                         abs=1e-10)


def test_alpha_zero_for_exact_rank_k_fully_observed():
    rng = np.random.default_rng(16)
    n, k = 25, 3
    a = rng.random((n, k)) @ rng.random((k, n))  # positive and exactly rank k
    rows, cols = np.nonzero(a)
    adj = PartialAdjacency(n, rows, cols, a[rows, cols])
    uu, ss, vv = np.linalg.svd(a)
    z = LowRankFactors(uu[:, :k], ss[:k], vv[:k, :].T)
    m = ImpliedMatrix(adj, z)
    dense = m.dense_oracle()
    np.testing.assert_allclose(dense, a, atol=1e-12)  # full observation
    alpha = m.alpha(ss[:k] ** 2)
    assert abs(alpha) <= 1e-8 * np.sum(a**2)


def test_alpha_matches_dense_trailing_mean():
    rng = np.random.default_rng(17)
    for _ in range(20):
        adj, z = random_instance(rng, n=15)
        m = ImpliedMatrix(adj, z)
        dense = m.dense_oracle()
        s = np.linalg.svd(dense, compute_uv=False)
        k = z.k
        expected = float(np.sum(s[k:] ** 2) / (15 - k))
        got = m.alpha(s[:k] ** 2)
        assert got == pytest.approx(expected, rel=1e-8, abs=1e-12)


def test_alpha_k_zero_convention():
    n, m_entries = 9, 11
    rng = np.random.default_rng(18)
    iu, ju = np.triu_indices(n, k=1)
    pick = rng.choice(len(iu), size=m_entries, replace=False)
    adj = PartialAdjacency(n, iu[pick], ju[pick], np.ones(m_entries))
    m = ImpliedMatrix(adj, None)
    assert m.alpha([]) == pytest.approx(m_entries / n, rel=1e-14)


def test_alpha_requires_n_greater_than_k():
    rng = np.random.default_rng(19)
    adj, z = random_instance(rng, n=8, k=3)
    m = ImpliedMatrix(adj, z)
    with pytest.raises(ValueError):
        m.alpha(np.ones(8))


def test_alpha_never_meaningfully_negative():
    rng = np.random.default_rng(20)
    for _ in range(10):
        adj, z = random_instance(rng, n=30)
        m = ImpliedMatrix(adj, z)
        dense = m.dense_oracle()
        s = np.linalg.svd(dense, compute_uv=False)
        alpha = m.alpha(s[: z.k] ** 2)
        assert alpha >= -1e-8 * np.sum(dense**2) / (30 - z.k)


def test_dense_oracle_missing_set_is_filled_from_z():
    rng = np.random.default_rng(21)
    n, k = 8, 2
    adj = PartialAdjacency(n, [], [], [])  # no nonzeros, empty L
    qu, _ = np.linalg.qr(rng.normal(size=(n, k)))
    qv, _ = np.linalg.qr(rng.normal(size=(n, k)))
    z = LowRankFactors(qu, np.array([2.0, 1.0]), qv)
    dense = ImpliedMatrix(adj, z).dense_oracle()
    zfull = z.reconstruct()
    np.testing.assert_allclose(dense, np.tril(zfull, 0), atol=1e-14)


def test_dense_oracle_cap():
    adj = PartialAdjacency(600, [0], [1], [1.0])
    m = ImpliedMatrix(adj, None)
    with pytest.raises(ValueError):
        m.dense_oracle()
    assert m.dense_oracle(cap=600).shape == (600, 600)
