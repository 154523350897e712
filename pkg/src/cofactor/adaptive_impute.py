"""Adaptive-threshold matrix completion over the implicit operator.

The iteration alternates a truncated SVD of the implied matrix with a
data-adaptive shrinkage of its singular values: the shrinkage level alpha is
the mean of the trailing squared singular values, obtained from norm
identities rather than from the trailing spectrum itself. A debiased
spectral initializer supplies the first iterate; with a user-fixed alpha the
same loop performs soft-impute-style completion instead.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .graph_store import PartialAdjacency
from .implicit_op import ImpliedMatrix
from .svd_engine import LowRankFactors, symmetric_eigs, truncated_svd


class FitError(Exception):
    """Degenerate or failed fit; carries any partial report and factors."""

    def __init__(self, message, report=None, factors=None):
        super().__init__(message)
        self.report = report
        self.factors = factors


@dataclass
class FitConfig:
    """Completion settings.

    epsilon is the relative-change stopping tolerance
    ||Z_{t+1} - Z_t||_F^2 / ||Z_{t+1}||_F^2 < epsilon; max_iters caps the
    iteration count. fixed_alpha switches off the adaptive threshold
    estimate (soft-impute mode: plain SVD initialization and a constant
    shrinkage level).
    """

    k: int
    epsilon: float = 1e-7
    max_iters: int = 200
    seed: int | None = None
    fixed_alpha: float | None = None
    svd_tol: float = 1e-8
    max_krylov_iters: int = 1000

    def validate(self):
        if self.k < 2:
            raise FitError(f"k must be >= 2, got {self.k}")
        if not self.epsilon > 0:
            raise FitError("epsilon must be positive")
        if self.max_iters < 1:
            raise FitError("max_iters must be >= 1")
        return self


@dataclass
class FitReport:
    """Per-iteration trace of the completion loop; JSON-serializable."""

    k: int
    epsilon: float
    max_iters: int
    seed: int | None = None
    fixed_alpha: float | None = None
    rel_changes: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    iter_seconds: list = field(default_factory=list)
    converged: bool = False
    converged_to_zero: bool = False
    clamp_count: int = 0

    @property
    def n_iters(self):
        return len(self.rel_changes)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FitReport":
        return cls(**json.loads(text))

    def check(self):
        lengths = {len(self.rel_changes), len(self.alphas),
                   len(self.lambdas), len(self.iter_seconds)}
        if len(lengths) != 1:
            raise FitError("inconsistent per-iteration trace lengths")
        if self.converged and self.rel_changes and not (
                self.rel_changes[-1] < self.epsilon or self.converged_to_zero):
            raise FitError("converged flag inconsistent with last relative change")
        return self


class GramOperator:
    """A^T A (or A A^T) with its diagonal damped by the observed fraction.

    Never materialized: each matvec is two sparse matvecs plus a diagonal
    correction, with the diagonal precomputed in O(nnz).
    """

    def __init__(self, fwd, rev, diag, p_hat):
        self._fwd = fwd
        self._rev = rev
        self._corr = (1.0 - p_hat) * diag
        self.shape = (fwd.shape[1], fwd.shape[1])

    def matvec(self, x):
        return self._rev @ (self._fwd @ x) - self._corr * x

    rmatvec = matvec  # symmetric


def gram_operators(adj: PartialAdjacency):
    """(Sigma_V, Sigma_U, p_hat) for the initializer; operators, not arrays."""
    a = adj.sparse()
    at = adj.sparse_csc().T
    p_hat = adj.n_observed / adj.n**2
    sq = adj.vals**2
    diag_ata = np.bincount(adj.cols, weights=sq, minlength=adj.n)
    diag_aat = np.bincount(adj.rows, weights=sq, minlength=adj.n)
    sigma_v = GramOperator(a, at, diag_ata, p_hat)
    sigma_u = GramOperator(at, a, diag_aat, p_hat)
    return sigma_v, sigma_u, p_hat


def _sign(x):
    return -1.0 if x < 0 else 1.0


def adaptive_initialize(adj: PartialAdjacency, k: int, svd_tol: float = 1e-8,
                        max_krylov_iters: int = 1000, seed=None) -> LowRankFactors:
    """Debiased spectral initializer for the completion iteration.

    Eigenvectors of the diagonal-damped Gram operators give the two
    singular subspaces; the singular values are debiased by the trailing
    eigenvalue mean (via the trace, so only top-k pairs are ever computed)
    and rescaled by the observed fraction. Relative signs are fixed by
    comparison against the singular vectors of the zero-filled data so the
    returned factors multiply out with consistent orientation.
    """
    if adj.nnz == 0:
        raise FitError("no observed signal: every observed cell is zero")
    n = adj.n
    if not 2 <= k <= n:
        raise FitError(f"k must satisfy 2 <= k <= n, got k={k}, n={n}")
    sigma_v, sigma_u, p_hat = gram_operators(adj)
    if p_hat == 0:
        raise FitError("empty observation set")

    evals_v, vhat = symmetric_eigs(sigma_v, k, tol=svd_tol,
                                   max_krylov_iters=max_krylov_iters, seed=seed)
    evals_u, uhat = symmetric_eigs(sigma_u, k, tol=svd_tol,
                                   max_krylov_iters=max_krylov_iters, seed=seed)

    # trailing-eigenvalue mean via the trace: tr(Sigma_V) = p_hat * ||A||_F^2
    trace = p_hat * adj.frob_sq
    alpha_tilde = (trace - float(np.sum(evals_v))) / (n - k)

    gap = evals_v - alpha_tilde
    clamped = int(np.sum(gap < 0))
    if clamped:
        warnings.warn(f"initializer clamped {clamped} negative spectral gap(s) "
                      "to zero", RuntimeWarning)
    lam = np.sqrt(np.clip(gap, 0.0, None)) / p_hat

    data_svd = truncated_svd(adj.sparse(), k, svd_tol=svd_tol,
                             max_krylov_iters=max_krylov_iters, seed=seed)
    signs = np.array([
        _sign(vhat[:, i] @ data_svd.V[:, i]) * _sign(uhat[:, i] @ data_svd.U[:, i])
        for i in range(k)])
    vhat = vhat * signs  # fold pair orientation into V, keeping D >= 0

    order = np.argsort(-lam, kind="stable")
    return LowRankFactors(uhat[:, order], lam[order], vhat[:, order])


def _plain_svd_init(adj, cfg):
    """Soft-impute mode initializer: rank-k SVD of the zero-filled data."""
    return truncated_svd(adj.sparse(), cfg.k, svd_tol=cfg.svd_tol,
                         max_krylov_iters=cfg.max_krylov_iters, seed=cfg.seed)


def rel_change_sq(z_new: LowRankFactors, z_old: LowRankFactors):
    """||Z_new - Z_old||_F^2 and ||Z_new||_F^2 from factors in O(n k^2)."""
    new_sq = np.sum(np.square(z_new.D, dtype=np.longdouble))
    old_sq = np.sum(np.square(z_old.D, dtype=np.longdouble))
    gu = (z_new.U * z_new.D).T @ (z_old.U * z_old.D)
    gv = z_old.V.T @ z_new.V
    cross = np.sum(gu * gv.T, dtype=np.longdouble)
    diff_sq = float(new_sq + old_sq - 2.0 * cross)
    return max(diff_sq, 0.0), float(new_sq)


def adaptive_impute(adj: PartialAdjacency, cfg: FitConfig):
    """Run the completion loop; returns (factors, report).

    Each iteration takes the top-k SVD of the implied matrix (warm-started
    from the previous right subspace), re-estimates the shrinkage level from
    the norm identity unless cfg.fixed_alpha pins it, shrinks the singular
    values through sqrt(lambda^2 - alpha) clamped at zero, and stops when
    the factored relative-change statistic drops below cfg.epsilon.

    Raises
    ------
    FitError
        Degenerate signal (all shrunk singular values zero); carries the
        partial report. SVD non-convergence propagates as SvdError.
    """
    cfg.validate()
    report = FitReport(k=cfg.k, epsilon=cfg.epsilon, max_iters=cfg.max_iters,
                       seed=cfg.seed, fixed_alpha=cfg.fixed_alpha)
    if cfg.fixed_alpha is not None:
        z = _plain_svd_init(adj, cfg)
    else:
        z = adaptive_initialize(adj, cfg.k, svd_tol=cfg.svd_tol,
                                max_krylov_iters=cfg.max_krylov_iters,
                                seed=cfg.seed)
    v0 = z.V[:, 0] if z.D[0] > 0 else None

    for _ in range(cfg.max_iters):
        tic = time.perf_counter()
        implied = ImpliedMatrix(adj, z)
        f = truncated_svd(implied, cfg.k, svd_tol=cfg.svd_tol,
                          max_krylov_iters=cfg.max_krylov_iters,
                          seed=cfg.seed, v0=v0)
        lam_sq = f.D**2
        alpha = (cfg.fixed_alpha if cfg.fixed_alpha is not None
                 else implied.alpha(lam_sq))
        shifted = lam_sq - alpha
        report.clamp_count += int(np.sum(shifted < 0))
        lam = np.sqrt(np.clip(shifted, 0.0, None))
        z_new = LowRankFactors(f.U, lam, f.V)

        diff_sq, new_sq = rel_change_sq(z_new, z)
        report.alphas.append(float(alpha))
        report.lambdas.append([float(x) for x in lam])
        if new_sq == 0.0:
            report.rel_changes.append(float("inf"))
            report.iter_seconds.append(time.perf_counter() - tic)
            report.converged_to_zero = True
            raise FitError("degenerate fit: all shrunk singular values are zero",
                           report=report, factors=z_new)
        rel = diff_sq / new_sq
        report.rel_changes.append(rel)
        report.iter_seconds.append(time.perf_counter() - tic)
        z = z_new
        v0 = f.V[:, 0]
        if rel < cfg.epsilon:
            report.converged = True
            break

    return z, report.check()
