"""Losses for comparing estimated factors against simulation truth.

Two views of estimation error: a rotation-invariant subspace distance
built from principal angles, and an elementwise factor RMSE that first
resolves the sign and column-order ambiguity with a skew-then-assignment
heuristic.  The heuristic only upper-bounds the true minimum over signed
permutations, which is the conservative direction for reporting error.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .varimax_factors import _skewness


class MetricError(Exception):
    pass


def _check_pair(a, b, what):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape != b.shape:
        raise MetricError(f"{what}: shapes {a.shape} and {b.shape} do not match")
    return a, b


def sin_theta(u, u_hat) -> float:
    """Frobenius norm of the sines of the principal angles between spans.

    Both inputs must be column-orthonormal. Zero iff the subspaces agree;
    at most sqrt(k).  Evaluated through the projector residual
    ||u_hat - u (u.T u_hat)||_F, which equals sqrt(sum(1 - sigma_i^2))
    for the clamped singular values of u.T u_hat but stays accurate when
    the angles are tiny.
    """
    u, u_hat = _check_pair(u, u_hat, "sin_theta")
    val = float(np.linalg.norm(u_hat - u @ (u.T @ u_hat)))
    return min(val, np.sqrt(u.shape[1]))


def _restricted_basis(mat, rows):
    mat = np.asarray(mat, dtype=float)
    if rows is None:
        return mat
    block = mat[np.asarray(rows)]
    if block.shape[0] < block.shape[1]:
        raise MetricError("too few identified rows to span the factors")
    q, _ = np.linalg.qr(block)
    return q


def subspace_loss(u, u_hat, v, v_hat, rows_u=None, rows_v=None) -> float:
    """Sum of the two sides' principal-angle distances.

    When identified-row ranges are given, each basis is restricted to
    those rows and re-orthonormalized by thin QR before the angles are
    computed, so clipped rows never contribute.
    """
    loss = sin_theta(_restricted_basis(u, rows_u), _restricted_basis(u_hat, rows_u))
    loss += sin_theta(_restricted_basis(v, rows_v), _restricted_basis(v_hat, rows_v))
    return loss


@dataclass
class AlignmentResult:
    """Signed permutation aligning estimated factor columns to reference ones."""

    P: np.ndarray
    cost: float
    flips_reference: np.ndarray
    flips_estimate: np.ndarray

    def validate(self):
        p = self.P
        k = p.shape[0]
        if not np.all(np.isin(p, (-1.0, 0.0, 1.0))):
            raise MetricError("alignment entries must lie in {-1, 0, 1}")
        if (np.count_nonzero(p, axis=0) != 1).any() or \
           (np.count_nonzero(p, axis=1) != 1).any():
            raise MetricError("alignment must have one nonzero per row and column")
        if np.max(np.abs(p.T @ p - np.eye(k))) > 0:
            raise MetricError("alignment must be orthogonal")
        return self


def align_factors(z, z_hat) -> AlignmentResult:
    """Match estimated columns to reference columns up to sign and order.

    Columns of both inputs are first flipped to nonnegative skewness,
    then an exact assignment over squared column distances picks the
    pairing.  The returned P satisfies cost = ||z - z_hat @ P||_F^2.
    """
    z, z_hat = _check_pair(z, z_hat, "align_factors")
    k = z.shape[1]
    s_ref = np.array([-1.0 if _skewness(z[:, c]) < 0.0 else 1.0
                      for c in range(k)])
    s_est = np.array([-1.0 if _skewness(z_hat[:, c]) < 0.0 else 1.0
                      for c in range(k)])
    zf = z * s_ref
    hf = z_hat * s_est
    # cost[a, b]: squared distance from estimate column a to reference column b
    cost = (np.sum(hf**2, axis=0)[:, None] + np.sum(zf**2, axis=0)[None, :]
            - 2.0 * hf.T @ zf)
    rows, cols = linear_sum_assignment(cost)
    perm = np.zeros((k, k))
    perm[rows, cols] = 1.0
    p = (np.diag(s_est) @ perm @ np.diag(s_ref)).astype(float)
    total = float(np.sum((z - z_hat @ p) ** 2))
    return AlignmentResult(P=p, cost=total, flips_reference=s_ref,
                           flips_estimate=s_est).validate()


def factor_rmse(z, z_hat, y, y_hat, rows_z=None, rows_y=None) -> float:
    """Elementwise RMSE of both factor matrices after alignment.

    Restricted to identified rows when ranges are given; the two sides
    must keep the same identified-row count so the normalization stays
    a plain per-entry mean.
    """
    z, z_hat = _check_pair(z, z_hat, "factor_rmse z side")
    y, y_hat = _check_pair(y, y_hat, "factor_rmse y side")
    if rows_z is not None:
        rows_z = np.asarray(rows_z)
        z, z_hat = z[rows_z], z_hat[rows_z]
    if rows_y is not None:
        rows_y = np.asarray(rows_y)
        y, y_hat = y[rows_y], y_hat[rows_y]
    if z.shape[0] != y.shape[0]:
        raise MetricError("identified row counts differ between the two sides")
    if z.shape[1] != y.shape[1]:
        raise MetricError("factor counts differ between the two sides")
    n, k = z.shape
    cost = align_factors(z, z_hat).cost + align_factors(y, y_hat).cost
    return float(np.sqrt(cost / (n * k)))


METRIC_FIELDS = ("n", "k", "delta", "estimator", "rep",
                 "subspace_loss", "factor_rmse", "seconds")


def _format_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_metric_rows(path, rows, fields=METRIC_FIELDS):
    """Write metric dicts as CSV with stable formatting.

    Floats are serialized with repr so identical numbers always produce
    identical bytes; callers control row order.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_format_cell(row[f]) for f in fields])
    return path


def read_metric_rows(path, fields=None):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for raw in reader:
            row = {}
            for key, val in raw.items():
                if fields is not None and key not in fields:
                    continue
                try:
                    row[key] = int(val)
                except ValueError:
                    try:
                        row[key] = float(val)
                    except ValueError:
                        row[key] = val
            out.append(row)
    return out
