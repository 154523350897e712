"""Truncated SVD / symmetric eigensolver for abstract linear operators.

Both solvers are Krylov methods with full reorthogonalization and thick
restart: Golub-Kahan-Lanczos bidiagonalization for singular triplets and
symmetric Lanczos for eigenpairs. Anything exposing ``shape`` plus
``matvec``/``rmatvec`` (dense arrays and scipy sparse matrices included)
can be factored, so the adaptive completion loop never materializes its
implied matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SvdError(Exception):
    """Solver failure; carries best-so-far residuals when available."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class LowRankFactors:
    """Rank-k factorization U diag(D) V^T with orthonormal U, V columns.

    D is nonnegative and nonincreasing. ``validate`` enforces the invariants
    at tolerance 1e-8; solvers re-orthonormalize before returning so the
    check passes by construction.
    """

    U: np.ndarray
    D: np.ndarray
    V: np.ndarray

    @property
    def n(self):
        return self.U.shape[0]

    @property
    def k(self):
        return self.U.shape[1]

    def validate(self, tol: float = 1e-8):
        if self.U.shape != self.V.shape or self.U.shape[1] != len(self.D):
            raise SvdError("factor dimensions disagree")
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.D))
                and np.all(np.isfinite(self.V))):
            raise SvdError("non-finite factor entries")
        if np.any(self.D < 0) or np.any(np.diff(self.D) > 0):
            raise SvdError("D must be nonnegative and nonincreasing")
        k = self.k
        for name, m in (("U", self.U), ("V", self.V)):
            gram_err = np.max(np.abs(m.T @ m - np.eye(k)))
            if gram_err > tol:
                raise SvdError(f"{name} columns not orthonormal: {gram_err:.2e}")
        return self

    def reconstruct(self) -> np.ndarray:
        """Dense U diag(D) V^T; test and small-n use only."""
        return (self.U * self.D) @ self.V.T

    def frob_sq(self) -> float:
        return float(np.sum(np.square(self.D, dtype=np.longdouble)))


def zero_factors(n: int, k: int) -> LowRankFactors:
    u = np.zeros((n, k))
    u[:k, :k] = np.eye(k)
    return LowRankFactors(u.copy(), np.zeros(k), u.copy())


class _Wrapped:
    """Adapter giving dense arrays / sparse matrices the operator protocol."""

    def __init__(self, a):
        self.shape = a.shape
        self._a = a
        self._at = a.T if isinstance(a, np.ndarray) else a.T.tocsr()

    def matvec(self, x):
        return self._a @ x

    def rmatvec(self, x):
        return self._at @ x


def as_operator(op):
    if hasattr(op, "matvec") and hasattr(op, "shape"):
        return op
    return _Wrapped(op)


def _start_vector(n, seed, v0):
    if v0 is not None:
        v = np.asarray(v0, dtype=np.float64).copy()
        nrm = np.linalg.norm(v)
        if nrm > 0 and np.all(np.isfinite(v)):
            return v / nrm
    rng = np.random.default_rng(seed if seed is not None else 0)
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _orthogonalize(w, basis, ncols):
    """Two rounds of classical Gram-Schmidt against basis[:, :ncols]."""
    if ncols == 0:
        return w
    b = basis[:, :ncols]
    w = w - b @ (b.T @ w)
    w = w - b @ (b.T @ w)
    return w


def truncated_svd(op, k: int, svd_tol: float = 1e-8,
                  max_krylov_iters: int = 1000, seed=None, v0=None,
                  krylov_dim=None) -> LowRankFactors:
    """Top-k singular triplets of an n x n linear operator.

    Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization,
    restarted thickly (the converged-end Ritz block plus residual coupling is
    kept between restarts). Deterministic given ``seed``; ``v0`` warm-starts
    the right Krylov space and takes precedence over the seed when usable.

    Parameters
    ----------
    op : operator
        Anything with ``shape`` and ``matvec``/``rmatvec``, or a dense /
        sparse matrix.
    k : int
        Number of triplets, 2 <= k <= n.
    svd_tol : float
        Residual target: ||A v_i - d_i u_i|| <= svd_tol * d_1 for each i.
    max_krylov_iters : int
        Budget of bidiagonalization steps across restarts.

    Raises
    ------
    SvdError
        Non-convergence within the budget (carries best residuals), or k
        out of range.
    """
    op = as_operator(op)
    n, n2 = op.shape
    if n != n2:
        raise SvdError("operator must be square")
    if not 2 <= k <= n:
        raise SvdError(f"k must satisfy 2 <= k <= n, got k={k}, n={n}")

    m = min(n, max(2 * k + 10, 20)) if krylov_dim is None else min(n, krylov_dim)
    if m <= k:
        m = min(n, k + 1)

    V = np.zeros((n, m + 1))
    U = np.zeros((n, m))
    B = np.zeros((m, m))

    V[:, 0] = _start_vector(n, seed, v0)
    nconv = 0  # locked Ritz triplets at the front of the basis
    steps = 0
    best_resid = None
    eps = np.finfo(float).eps

    while True:
        j = nconv
        beta = 0.0
        while j < m:
            w = op.matvec(V[:, j])
            w = _orthogonalize(w, U, j)
            alpha = float(np.linalg.norm(w))
            # on breakdown the true coefficient is ~0; keep it and continue
            # the basis in a fresh orthogonal direction
            if alpha < eps * n * max(1.0, np.max(B)):
                B[j, j] = 0.0
                w = _orthogonalize(_start_vector(n, (seed or 0) + j + 1, None), U, j)
                nrm = np.linalg.norm(w)
                U[:, j] = w / nrm if nrm > 0 else w
            else:
                B[j, j] = alpha
                U[:, j] = w / alpha

            w = op.rmatvec(U[:, j])
            w = _orthogonalize(w, V, j + 1)
            beta = float(np.linalg.norm(w))
            if beta < eps * n * max(1.0, np.max(B)):
                beta = 0.0
                w = _orthogonalize(_start_vector(n, (seed or 0) + 7 * (j + 1), None),
                                   V, j + 1)
                nrm = np.linalg.norm(w)
                V[:, j + 1] = w / nrm if nrm > 0 else w
            else:
                V[:, j + 1] = w / beta
            if j + 1 < m:
                B[j, j + 1] = beta
            steps += 1
            j += 1
        beta_m = beta  # coupling of V[:, m] to the projected problem

        P, s, Qt = np.linalg.svd(B)
        # residual estimate for triplet i: beta_m * |last row of P_i|
        resid = beta_m * np.abs(P[m - 1, :k])
        best_resid = resid if best_resid is None else np.minimum(best_resid, resid)
        tol_scale = s[0] if s[0] > 0 else 1.0
        if np.all(resid <= svd_tol * tol_scale):
            Uk = U @ P[:, :k]
            Vk = V[:, :m] @ Qt[:k, :].T
            return _finalize(op, Uk, s[:k].copy(), Vk, svd_tol)
        if steps >= max_krylov_iters:
            raise SvdError(
                f"truncated_svd: no convergence after {steps} bidiagonalization "
                f"steps (worst residual {float(np.max(resid / tol_scale)):.3e} "
                f"relative)", residuals=best_resid)

        # thick restart: keep l leading Ritz triplets, re-couple via beta_m
        l = min(k + 3, m - 1)
        U[:, :l] = U @ P[:, :l]
        V[:, :l] = V[:, :m] @ Qt[:l, :].T
        V[:, l] = V[:, m]
        B[:, :] = 0.0
        B[np.arange(l), np.arange(l)] = s[:l]
        B[:l, l] = beta_m * P[m - 1, :l]  # arrow column at the carried vector
        nconv = l


def _finalize(op, U, D, V, svd_tol):
    """Re-orthonormalize, canonicalize signs, verify residuals explicitly."""
    # order nonincreasing (projected SVD already sorted, keep stable)
    order = np.argsort(-D, kind="stable")
    U, D, V = U[:, order], D[order], V[:, order]

    # thin-QR cleanup keeps factors orthonormal to machine precision
    qu, ru = np.linalg.qr(U)
    qv, rv = np.linalg.qr(V)
    # R factors are near-identity; fold their signs only
    su = np.sign(np.diag(ru))
    sv = np.sign(np.diag(rv))
    su[su == 0] = 1.0
    sv[sv == 0] = 1.0
    U = qu * su
    V = qv * sv

    # sign canonicalization: largest-|entry| coordinate of each u_i positive
    for i in range(U.shape[1]):
        jmax = int(np.argmax(np.abs(U[:, i])))
        if U[jmax, i] < 0:
            U[:, i] = -U[:, i]
            V[:, i] = -V[:, i]

    scale = D[0] if D.size and D[0] > 0 else 1.0
    resid = np.array([np.linalg.norm(op.matvec(V[:, i]) - D[i] * U[:, i])
                      for i in range(len(D))])
    if np.any(resid > 10 * max(svd_tol, 1e-14) * scale):
        raise SvdError("final residual verification failed", residuals=resid)
    return LowRankFactors(U, np.maximum(D, 0.0), V)


def symmetric_eigs(op, k: int, tol: float = 1e-8,
                   max_krylov_iters: int = 1000, seed=None, v0=None):
    """Top-k eigenpairs (by algebraic value) of a symmetric operator.

    Thick-restart symmetric Lanczos with full reorthogonalization. Returns
    (eigenvalues nonincreasing, eigenvectors n x k). Residuals satisfy
    ||S x_i - lam_i x_i|| <= tol * max|lam| at return.
    """
    op = as_operator(op)
    n, n2 = op.shape
    if n != n2:
        raise SvdError("operator must be square")
    if not 1 <= k <= n:
        raise SvdError(f"k must satisfy 1 <= k <= n, got k={k}, n={n}")

    m = min(n, max(2 * k + 10, 20))
    V = np.zeros((n, m + 1))
    T = np.zeros((m, m))
    V[:, 0] = _start_vector(n, seed, v0)
    nconv = 0
    steps = 0
    best_resid = None
    eps = np.finfo(float).eps

    while True:
        j = nconv
        beta = 0.0
        while j < m:
            w = op.matvec(V[:, j])
            alpha = float(w @ V[:, j])
            T[j, j] = alpha
            w = _orthogonalize(w, V, j + 1)
            beta = float(np.linalg.norm(w))
            if beta < eps * n * max(1.0, np.max(np.abs(T))):
                beta = 0.0
                w = _orthogonalize(_start_vector(n, (seed or 0) + 11 * (j + 1), None),
                                   V, j + 1)
                nrm = np.linalg.norm(w)
                V[:, j + 1] = w / nrm if nrm > 0 else w
            else:
                V[:, j + 1] = w / beta
            if j + 1 < m:
                T[j, j + 1] = beta
                T[j + 1, j] = beta
            steps += 1
            j += 1
        beta_m = beta

        evals, P = np.linalg.eigh(T)
        order = np.argsort(-evals)  # top-k by algebraic value
        evals, P = evals[order], P[:, order]
        resid = beta_m * np.abs(P[m - 1, :k])
        best_resid = resid if best_resid is None else np.minimum(best_resid, resid)
        scale = np.max(np.abs(evals)) if np.max(np.abs(evals)) > 0 else 1.0
        if np.all(resid <= tol * scale):
            X = V[:, :m] @ P[:, :k]
            q, r = np.linalg.qr(X)
            s = np.sign(np.diag(r))
            s[s == 0] = 1.0
            X = q * s
            for i in range(k):
                jmax = int(np.argmax(np.abs(X[:, i])))
                if X[jmax, i] < 0:
                    X[:, i] = -X[:, i]
            return evals[:k].copy(), X
        if steps >= max_krylov_iters:
            raise SvdError(
                f"symmetric_eigs: no convergence after {steps} Lanczos steps",
                residuals=best_resid)

        l = min(k + 3, m - 1)
        V[:, :l] = V[:, :m] @ P[:, :l]
        V[:, l] = V[:, m]
        T[:, :] = 0.0
        T[np.arange(l), np.arange(l)] = evals[:l]
        rho = beta_m * P[m - 1, :l]
        T[:l, l] = rho
        T[l, :l] = rho
        nconv = l
