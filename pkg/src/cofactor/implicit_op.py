"""Implicit representation of the completion iterate's implied matrix.

The iterate is A~ = P_Omega~(A) - P_L(Z) - P_U(Z) + Z: observed cells keep
their data values and missing cells are filled from the current low-rank
Z = U diag(D) V^T. Nothing n x n is ever formed; matvecs cost
O(|Omega~| + nk) via running sums over the columns of diag(D) V^T, and the
squared Frobenius norm of the strict upper triangle of Z comes from an
O(nk^2) pairwise-column identity. Cumulative sums run in extended precision
so the norm identities hold to the tolerances the shrinkage estimate needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_store import PartialAdjacency
from .svd_engine import LowRankFactors


@dataclass
class WorkBuffers:
    """Per-caller scratch for matvecs: reuse avoids reallocation in hot loops.

    Contents are transient; nothing observable survives a call. Concurrent
    matvecs on one ImpliedMatrix must use distinct buffers (or none, in
    which case each call allocates its own).
    """

    w: np.ndarray
    acc: np.ndarray

    @classmethod
    def for_shape(cls, k: int, n: int):
        return cls(np.empty((k, n)), np.empty((k, n), dtype=np.longdouble))


class ImpliedMatrix:
    """Operator view of the four-term completion iterate.

    Parameters
    ----------
    data : PartialAdjacency
        Observed cells; the strict upper triangle is observed by contract,
        plus whatever at-or-below-diagonal cells the instance marks.
    z : LowRankFactors or None
        Current low-rank iterate; None means Z = 0.

    Values of Z on the observed lower cells are cached at construction
    (O(|L| k)); builders create a fresh ImpliedMatrix per iterate, which is
    what keeps the cache consistent with z.
    """

    def __init__(self, data: PartialAdjacency, z: LowRankFactors | None):
        n = data.n
        if z is not None:
            if z.U.shape[0] != n or z.V.shape[0] != n:
                raise ValueError("factor dimensions disagree with data.n")
            k = z.k
            gram = np.max(np.abs(z.U.T @ z.U - np.eye(k)))
            gram_v = np.max(np.abs(z.V.T @ z.V - np.eye(k)))
            if max(gram, gram_v) > 1e-8:
                raise ValueError("z factors must have orthonormal columns")
        self.data = data
        self.z = z
        self.n = n
        self.k = 0 if z is None else z.k
        self.shape = (n, n)
        self.dtype = np.dtype(np.float64)

        self._a = data.sparse()
        self._at = data.sparse_csc().T  # csr view of the transpose
        self._l_rows, self._l_cols = data.lower_cells()
        if z is None:
            self._dvt = None
            self._dut = None
            self._l_vals = np.zeros(len(self._l_rows))
        else:
            self._dvt = z.D[:, None] * z.V.T
            self._dut = z.D[:, None] * z.U.T
            self._l_vals = np.einsum(
                "ik,ik->i", z.U[self._l_rows] * z.D, z.V[self._l_cols])

    def make_buffers(self) -> WorkBuffers:
        return WorkBuffers.for_shape(max(self.k, 1), self.n)

    def _check_vector(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite entries in input vector")
        return x

    def matvec(self, x, buffers: WorkBuffers | None = None):
        """(A~ x): sparse term minus the two projected-Z terms plus Z x."""
        x = self._check_vector(x)
        out = self._a @ x
        if self.z is None:
            return out
        u, d, v = self.z.U, self.z.D, self.z.V
        # P_L(Z) x over the observed lower cells
        if len(self._l_rows):
            out -= np.bincount(self._l_rows,
                               weights=self._l_vals * x[self._l_cols],
                               minlength=self.n)
        # P_U(Z) x via suffix sums of W = (D V^T) scaled by x
        if buffers is None:
            buffers = self.make_buffers()
        w = np.multiply(self._dvt, x[None, :], out=buffers.w)
        np.cumsum(w[:, ::-1], axis=1, dtype=np.longdouble, out=buffers.acc)
        suffix = buffers.acc[:, ::-1]  # suffix[r, i] = sum_{j >= i} w[r, j]
        excl = (suffix - w).astype(np.float64)
        out -= np.einsum("ir,ri->i", u, excl)
        # + Z x
        out += u @ (self._dvt @ x)
        return out

    def rmatvec(self, x, buffers: WorkBuffers | None = None):
        """(A~^T x): mirror of matvec with prefix sums over rows i < j."""
        x = self._check_vector(x)
        out = self._at @ x
        if self.z is None:
            return out
        u, d, v = self.z.U, self.z.D, self.z.V
        if len(self._l_rows):
            out -= np.bincount(self._l_cols,
                               weights=self._l_vals * x[self._l_rows],
                               minlength=self.n)
        if buffers is None:
            buffers = self.make_buffers()
        w = np.multiply(self._dut, x[None, :], out=buffers.w)
        np.cumsum(w, axis=1, dtype=np.longdouble, out=buffers.acc)
        excl = (buffers.acc - w).astype(np.float64)  # sum over i < j
        out -= np.einsum("jr,rj->j", v, excl)
        out += v @ (self._dut @ x)
        return out

    def alpha(self, top_sq_singvals) -> float:
        """Trailing-mean shrinkage level via the five-term norm identity.

        top_sq_singvals must be the squared top singular values of this
        operator; the identity then gives the mean of the remaining n - k
        squared singular values without forming A~.
        """
        lam_sq = np.asarray(top_sq_singvals, dtype=np.float64)
        k = len(lam_sq)
        if self.n <= k:
            raise ValueError("alpha requires n > k")
        total = np.longdouble(self.data.frob_sq)
        if self.z is not None:
            total += np.sum(np.square(self.z.D, dtype=np.longdouble))
            total -= np.sum(np.square(self._l_vals, dtype=np.longdouble))
            total -= np.longdouble(frob_sq_upper(self.z))
        total -= np.sum(lam_sq, dtype=np.longdouble)
        return float(total / (self.n - k))

    def dense_oracle(self, cap: int = 500) -> np.ndarray:
        """Materialize A~ elementwise; test oracle for n <= cap only."""
        if self.n > cap:
            raise ValueError(f"dense_oracle capped at n={cap}, got n={self.n}")
        n = self.n
        z = np.zeros((n, n)) if self.z is None else self.z.reconstruct()
        observed = np.triu(np.ones((n, n), dtype=bool), 1)
        observed[self._l_rows, self._l_cols] = True
        return np.where(observed, self._a.toarray(), z)


def frob_sq_upper(z: LowRankFactors) -> float:
    """||P_U(Z)||_F^2 for Z = U diag(D) V^T in O(n k^2) flops.

    Expands the square over factor-column pairs (r, q): the strict-upper mass
    is sum_i U_ir U_iq * (suffix sums over j > i of G_rj G_qj) with
    G = diag(D) V^T, accumulated in extended precision.
    """
    u, d, v = z.U, z.D, z.V
    n, k = u.shape
    g = d[:, None] * v.T
    total = np.longdouble(0.0)
    for r in range(k):
        for q in range(r, k):
            prod = g[r] * g[q]
            suffix = np.cumsum(prod[::-1], dtype=np.longdouble)[::-1]
            excl = suffix - prod
            term = np.sum(u[:, r] * u[:, q] * excl, dtype=np.longdouble)
            total += term if r == q else 2.0 * term
    return float(total)
