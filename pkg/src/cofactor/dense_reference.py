"""Naive dense twin of the completion loop, for equivalence testing.

Everything here materializes n x n arrays and computes norms and trailing
means definitionally, bypassing the implicit-operator identities and the
factored update algebra. The truncated SVD routine is shared (same solver,
tolerances, seed, warm start) so any disagreement with the optimized path
isolates the representation, not the eigensolver. Test/diagnostic use only.
"""

from __future__ import annotations

import numpy as np

from .graph_store import PartialAdjacency
from .svd_engine import LowRankFactors, symmetric_eigs, truncated_svd


def observed_mask(adj: PartialAdjacency) -> np.ndarray:
    n = adj.n
    mask = np.triu(np.ones((n, n), dtype=bool), 1)
    lr, lc = adj.lower_cells()
    mask[lr, lc] = True
    return mask


def dense_initialize(adj: PartialAdjacency, k: int, svd_tol: float = 1e-8,
                     max_krylov_iters: int = 1000, seed=None) -> LowRankFactors:
    """Initializer with dense Gram matrices and a definitional trailing mean.

    Sigma_V and Sigma_U are formed explicitly; the debiasing level is the
    literal mean of the n-k trailing eigenvalues from a full dense
    eigendecomposition (no trace shortcut).
    """
    n = adj.n
    a = adj.sparse().toarray()
    p_hat = adj.n_observed / n**2
    ata = a.T @ a
    aat = a @ a.T
    sigma_v = ata - (1.0 - p_hat) * np.diag(np.diag(ata))
    sigma_u = aat - (1.0 - p_hat) * np.diag(np.diag(aat))

    evals_v, vhat = symmetric_eigs(sigma_v, k, tol=svd_tol,
                                   max_krylov_iters=max_krylov_iters, seed=seed)
    evals_u, uhat = symmetric_eigs(sigma_u, k, tol=svd_tol,
                                   max_krylov_iters=max_krylov_iters, seed=seed)

    all_evals = np.sort(np.linalg.eigvalsh(sigma_v))[::-1]
    alpha_tilde = float(np.mean(all_evals[k:]))
    lam = np.sqrt(np.clip(evals_v - alpha_tilde, 0.0, None)) / p_hat

    data_svd = truncated_svd(a, k, svd_tol=svd_tol,
                             max_krylov_iters=max_krylov_iters, seed=seed)
    for i in range(k):
        s = np.sign(vhat[:, i] @ data_svd.V[:, i]) or 1.0
        s *= np.sign(uhat[:, i] @ data_svd.U[:, i]) or 1.0
        if s < 0:
            vhat[:, i] = -vhat[:, i]
    return LowRankFactors(uhat, lam, vhat)


def dense_fit(adj: PartialAdjacency, k: int, iters: int,
              svd_tol: float = 1e-8, max_krylov_iters: int = 1000,
              seed=None, fixed_alpha=None):
    """Fixed-iteration dense reference loop.

    Returns (factors, alphas, rel_changes); alphas[t] is the definitional
    trailing mean (||A~||_F^2 - sum of top-k squared singular values) / (n-k)
    computed on the materialized iterate, rel_changes[t] the dense Frobenius
    ratio.
    """
    n = adj.n
    a = adj.sparse().toarray()
    mask = observed_mask(adj)
    if fixed_alpha is not None:
        z = truncated_svd(a, k, svd_tol=svd_tol,
                          max_krylov_iters=max_krylov_iters, seed=seed)
    else:
        z = dense_initialize(adj, k, svd_tol=svd_tol,
                             max_krylov_iters=max_krylov_iters, seed=seed)
    z_dense = z.reconstruct()
    v0 = z.V[:, 0] if z.D[0] > 0 else None

    alphas, rel_changes = [], []
    for _ in range(iters):
        a_tilde = np.where(mask, a, z_dense)
        f = truncated_svd(a_tilde, k, svd_tol=svd_tol,
                          max_krylov_iters=max_krylov_iters, seed=seed, v0=v0)
        if fixed_alpha is not None:
            alpha = fixed_alpha
        else:
            total = float(np.sum(np.square(a_tilde, dtype=np.longdouble)))
            alpha = (total - float(np.sum(f.D**2))) / (n - k)
        lam = np.sqrt(np.clip(f.D**2 - alpha, 0.0, None))
        new_dense = (f.U * lam) @ f.V.T
        denom = float(np.sum(new_dense**2))
        rel_changes.append(float(np.sum((new_dense - z_dense) ** 2)) / denom
                           if denom > 0 else float("inf"))
        alphas.append(float(alpha))
        z = LowRankFactors(f.U, lam, f.V)
        z_dense = new_dense
        v0 = f.V[:, 0]
    return z, alphas, rel_changes
