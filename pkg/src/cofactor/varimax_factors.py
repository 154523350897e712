"""Rotation of singular subspaces into interpretable co-factors.

A fitted low-rank model (U, D, V) is only defined up to rotation within
its singular subspaces.  This module picks the varimax representative:
the orthogonal rotation maximizing the spread of squared loadings, which
tends to concentrate each column on a few rows.  The rotated loadings,
their mixing matrix, and forward-in-time imputation live here.
"""

from dataclasses import dataclass, field

import numpy as np

from .svd_engine import LowRankFactors


class FactorError(Exception):
    pass


class UnidentifiedRowError(FactorError):
    """Raised when a loading row outside the identified range is requested."""


def varimax_value(loadings) -> float:
    """Raw varimax criterion: per-column variance of squared loadings, summed."""
    sq = np.asarray(loadings, dtype=float) ** 2
    return float(np.sum(np.mean(sq**2, axis=0) - np.mean(sq, axis=0) ** 2))


def varimax_rotation(u, iters: int = 1000, tol: float = 1e-10):
    """Rotate the columns of an orthonormal matrix to a varimax optimum.

    Classic pairwise Jacobi sweeps on the raw quartic criterion, without
    row normalization.  Each pair of columns is rotated by the closed-form
    optimal angle; sweeps repeat until the relative improvement of the
    criterion drops below ``tol`` or ``iters`` sweeps have run.  Starts
    from the identity, so the result is deterministic for fixed input.

    Returns the k x k orthogonal rotation R; the rotated loadings are
    ``u @ R``.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 2:
        raise FactorError("loadings must be a 2-d array")
    n, k = u.shape
    if k == 1:
        return np.eye(1)
    if n < 2:
        raise FactorError("need at least two rows to rotate")

    loads = u.copy()
    rot = np.eye(k)
    value = varimax_value(loads)
    for _ in range(iters):
        for p in range(k - 1):
            for q in range(p + 1, k):
                x = loads[:, p].copy()
                y = loads[:, q].copy()
                d1 = x * x - y * y
                d2 = 2.0 * x * y
                a = d1.sum()
                b = d2.sum()
                c = (d1 * d1 - d2 * d2).sum()
                d = 2.0 * (d1 * d2).sum()
                theta = 0.25 * np.arctan2(d - 2.0 * a * b / n,
                                          c - (a * a - b * b) / n)
                if abs(theta) < 1e-16:
                    continue
                cs, sn = np.cos(theta), np.sin(theta)
                loads[:, p] = x * cs + y * sn
                loads[:, q] = y * cs - x * sn
                rp = rot[:, p].copy()
                rq = rot[:, q].copy()
                rot[:, p] = rp * cs + rq * sn
                rot[:, q] = rq * cs - rp * sn
        new_value = varimax_value(loads)
        if new_value - value <= tol * max(new_value, np.finfo(float).tiny):
            break
        value = new_value
    # polish accumulated Givens round-off back to an exactly orthogonal R
    uu, _, vvt = np.linalg.svd(rot)
    return uu @ vvt


def _skewness(x) -> float:
    centered = x - np.mean(x)
    m2 = np.mean(centered**2)
    if m2 <= 0.0:
        return 0.0
    return float(np.mean(centered**3) / m2**1.5)


@dataclass
class CoFactorModel:
    """Varimax-rotated co-factors of a directed network fit.

    ``Z_hat`` holds outgoing (citing-side) loadings, ``Y_hat`` incoming
    (cited-side) loadings, both scaled so columns have unit mean square.
    ``B_hat`` mixes them: Z_hat @ B_hat @ Y_hat.T reproduces the fitted
    low-rank matrix.  Rows outside the identified ranges carry numbers
    but no meaning; lookups there raise instead of returning them.
    """

    Z_hat: np.ndarray
    Y_hat: np.ndarray
    B_hat: np.ndarray
    identified_rows_Z: np.ndarray
    identified_rows_Y: np.ndarray
    R_U: np.ndarray = field(default=None)
    R_V: np.ndarray = field(default=None)
    flips_Z: np.ndarray = field(default=None)
    flips_Y: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return self.Z_hat.shape[0]

    @property
    def k(self) -> int:
        return self.Z_hat.shape[1]

    def reconstruct(self):
        return self.Z_hat @ self.B_hat @ self.Y_hat.T

    def is_identified(self, i: int, side: str) -> bool:
        rows = self.identified_rows_Z if side == "z" else self.identified_rows_Y
        if rows.size == 0:
            return False
        # identified ranges are contiguous; bounds check beats membership scan
        return bool(rows[0] <= i <= rows[-1])


def _clip_ranges(clip_info, n):
    if clip_info is None:
        return 0, 0
    if hasattr(clip_info, "clip_rows") and hasattr(clip_info, "clip_cols"):
        return int(clip_info.clip_rows), int(clip_info.clip_cols)
    clip_rows, clip_cols = clip_info
    return int(clip_rows), int(clip_cols)


def build_cofactors(fit: LowRankFactors, clip_info=None, iters: int = 1000,
                    tol: float = 1e-10) -> CoFactorModel:
    """Rotate fitted factors into a sign-fixed co-factor model.

    Both singular bases are varimax-rotated, scaled by sqrt(n), and the
    mixing matrix absorbs the rotations so the product is unchanged.
    Columns whose sample skewness is negative are negated together with
    the matching row (Z side) or column (Y side) of the mixing matrix,
    which keeps the reconstruction identity exact.
    """
    fit.validate()
    n, k = fit.n, fit.k
    r_u = varimax_rotation(fit.U, iters=iters, tol=tol)
    r_v = varimax_rotation(fit.V, iters=iters, tol=tol)
    z_hat = np.sqrt(n) * fit.U @ r_u
    y_hat = np.sqrt(n) * fit.V @ r_v
    b_hat = (r_u.T * fit.D) @ r_v / n

    flips_z = np.zeros(k, dtype=bool)
    flips_y = np.zeros(k, dtype=bool)
    for c in range(k):
        if _skewness(z_hat[:, c]) < 0.0:
            z_hat[:, c] = -z_hat[:, c]
            b_hat[c, :] = -b_hat[c, :]
            flips_z[c] = True
        if _skewness(y_hat[:, c]) < 0.0:
            y_hat[:, c] = -y_hat[:, c]
            b_hat[:, c] = -b_hat[:, c]
            flips_y[c] = True

    clip_rows, clip_cols = _clip_ranges(clip_info, n)
    return CoFactorModel(
        Z_hat=z_hat,
        Y_hat=y_hat,
        B_hat=b_hat,
        identified_rows_Z=np.arange(0, n - clip_rows),
        identified_rows_Y=np.arange(clip_cols, n),
        R_U=r_u,
        R_V=r_v,
        flips_Z=flips_z,
        flips_Y=flips_y,
    )


def impute_forward(model: CoFactorModel, i: int, j: int) -> float:
    """Model-based citation propensity of document i toward document j.

    The value is a similarity score, not a probability; it can fall
    outside [0, 1].
    """
    if not model.is_identified(i, "z"):
        raise UnidentifiedRowError(f"row {i} is outside the identified Z range")
    if not model.is_identified(j, "y"):
        raise UnidentifiedRowError(f"row {j} is outside the identified Y range")
    return float(model.Z_hat[i] @ model.B_hat @ model.Y_hat[j])


def imputed_indegree(model: CoFactorModel):
    """Column sums of imputed scores over identified earlier documents.

    Documents are indexed newest first, so "earlier than j" means row
    index strictly greater than j.  Entry j sums the imputed scores from
    every identified row i > j.  Entries for rows outside the identified
    Y range are NaN, never a silent zero.
    """
    n = model.n
    masked = np.zeros_like(model.Z_hat)
    idz = model.identified_rows_Z
    masked[idz] = model.Z_hat[idz]
    # suffix[j] = sum of identified Z rows strictly below j
    suffix = np.cumsum(masked[::-1], axis=0, dtype=np.longdouble)[::-1]
    suffix = np.vstack([suffix[1:], np.zeros((1, model.k))])
    scores = np.einsum("jk,jk->j",
                       (suffix @ model.B_hat.astype(np.longdouble)),
                       model.Y_hat.astype(np.longdouble))
    out = np.asarray(scores, dtype=float)
    mask = np.ones(n, dtype=bool)
    mask[model.identified_rows_Y] = False
    out[mask] = np.nan
    return out


def write_cofactors(model: CoFactorModel, out_dir, node_order=None):
    """Export loadings, mixing matrix and metadata under ``out_dir``.

    Writes z_loadings.csv and y_loadings.csv (node_id plus one column per
    factor), b_hat.csv, and cofactors.json with shapes, clip ranges and
    the sign flips applied.  Returns the list of paths written.
    """
    import csv
    import json
    import os

    os.makedirs(out_dir, exist_ok=True)
    if node_order is None:
        node_order = [str(i + 1) for i in range(model.n)]
    if len(node_order) != model.n:
        raise FactorError("node_order length does not match the model")
    header = ["node_id"] + [f"factor_{c + 1:02d}" for c in range(model.k)]

    paths = []

    def dump(name, mat):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(model.n):
                writer.writerow([node_order[i]] + [repr(float(v)) for v in mat[i]])
        paths.append(path)

    dump("z_loadings.csv", model.Z_hat)
    dump("y_loadings.csv", model.Y_hat)

    b_path = os.path.join(out_dir, "b_hat.csv")
    with open(b_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in model.B_hat:
            writer.writerow([repr(float(v)) for v in row])
    paths.append(b_path)

    meta = {
        "n": model.n,
        "k": model.k,
        "identified_rows_z": [int(model.identified_rows_Z[0]),
                              int(model.identified_rows_Z[-1])]
        if model.identified_rows_Z.size else [],
        "identified_rows_y": [int(model.identified_rows_Y[0]),
                              int(model.identified_rows_Y[-1])]
        if model.identified_rows_Y.size else [],
        "flips_z": model.flips_Z.tolist() if model.flips_Z is not None else None,
        "flips_y": model.flips_Y.tolist() if model.flips_Y is not None else None,
    }
    meta_path = os.path.join(out_dir, "cofactors.json")
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(meta_path)
    return paths


def read_cofactors(out_dir):
    """Load a model written by write_cofactors.

    Returns (model, node_order). Loadings are read back exactly (repr
    round trip), so write -> read -> write is byte stable.
    """
    import csv
    import json
    import os

    with open(os.path.join(out_dir, "cofactors.json")) as fh:
        meta = json.load(fh)
    n, k = int(meta["n"]), int(meta["k"])

    def load(name):
        path = os.path.join(out_dir, name)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if len(header) != k + 1 or header[0] != "node_id":
                raise FactorError(f"{path}: unexpected header {header!r}")
            ids, rows = [], []
            for row in reader:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
        if len(rows) != n:
            raise FactorError(f"{path}: expected {n} rows, got {len(rows)}")
        return ids, np.array(rows)

    ids_z, z_hat = load("z_loadings.csv")
    ids_y, y_hat = load("y_loadings.csv")
    if ids_z != ids_y:
        raise FactorError("z and y loading files disagree on node order")
    with open(os.path.join(out_dir, "b_hat.csv"), newline="") as fh:
        b_hat = np.array([[float(v) for v in row] for row in csv.reader(fh)])
    if b_hat.shape != (k, k):
        raise FactorError(f"b_hat.csv: expected {k}x{k}, got {b_hat.shape}")

    def span(bounds):
        if not bounds:
            return np.arange(0)
        return np.arange(int(bounds[0]), int(bounds[1]) + 1)

    def flips(key):
        v = meta.get(key)
        return None if v is None else np.array(v)

    model = CoFactorModel(z_hat, y_hat, b_hat,
                          identified_rows_Z=span(meta["identified_rows_z"]),
                          identified_rows_Y=span(meta["identified_rows_y"]),
                          flips_Z=flips("flips_z"), flips_Y=flips("flips_y"))
    return model, ids_z
