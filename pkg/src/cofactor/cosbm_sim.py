"""Degree-corrected co-blockmodel test bed with chronological masking.

Ground truth here is a directed blockmodel whose expected adjacency is an
exact rank-k product: node i sends with propensity theta_out[i] from block
z(i), receives with theta_in[i] into block y(i), and a k x k mixing matrix
couples the blocks.  Poisson counts are drawn around that expectation, the
lower triangle is masked to mimic citation-style observation, and several
reference estimators plus a replicate runner support the simulation study.
"""

import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .adaptive_impute import FitConfig, adaptive_impute
from .eval_metrics import factor_rmse, subspace_loss
from .graph_store import PartialAdjacency, clip, write_edge_list
from .svd_engine import LowRankFactors, truncated_svd
from .varimax_factors import build_cofactors


class SimError(Exception):
    pass


@dataclass
class SimConfig:
    """Parameters of one simulated network draw."""

    n: int
    k: int
    delta: float
    seed: int = 0
    b_within: float = 0.8
    b_inactive: float = 0.01
    theta_shift: float = 1.0
    theta_mean: float = 8.0
    clip_fraction: float = 0.1

    @property
    def b_between(self) -> float:
        return self.b_within / 2.0 - (self.k - 2) * self.b_inactive

    @property
    def ell(self) -> int:
        return int(self.n * self.clip_fraction)

    def validate(self):
        if self.n < 2 or self.k < 1:
            raise SimError("need n >= 2 and k >= 1")
        if self.delta <= 0:
            raise SimError("delta must be positive")
        if self.k >= 2 and self.b_between < 0:
            raise SimError(
                f"infeasible mixing pattern: b_between = {self.b_between} < 0")
        if not 0.0 <= self.clip_fraction <= 0.5:
            raise SimError("clip fraction must lie in [0, 0.5]")
        return self

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text)).validate()


def pattern_matrix(cfg: SimConfig):
    """Unscaled mixing pattern: strong diagonal, k bridge entries, weak rest.

    The bridge entries sit on the circular superdiagonal, which keeps the
    pattern full rank; that is verified numerically before returning.
    """
    cfg.validate()
    k = cfg.k
    if k == 1:
        return np.array([[cfg.b_within]])
    b = np.full((k, k), cfg.b_inactive)
    np.fill_diagonal(b, cfg.b_within)
    for i in range(k):
        b[i, (i + 1) % k] = cfg.b_between
    s = np.linalg.svd(b, compute_uv=False)
    if s[-1] <= 1e-8 * s[0]:
        raise SimError(f"mixing pattern is rank deficient for k = {k}")
    return b


@dataclass
class CoSbmTruth:
    """Sampled ground truth: labels, propensities, and the rescaled mixer.

    Labels are 1-based.  Z and Y are the scaled membership matrices whose
    product with B gives the expected adjacency, so the expectation has
    exact rank k whenever every block is populated on both sides.
    """

    z_labels: np.ndarray
    y_labels: np.ndarray
    theta_out: np.ndarray
    theta_in: np.ndarray
    B: np.ndarray
    Z: np.ndarray = field(init=False)
    Y: np.ndarray = field(init=False)

    def __post_init__(self):
        k = self.B.shape[0]
        n = self.z_labels.shape[0]
        z = np.zeros((n, k))
        z[np.arange(n), self.z_labels - 1] = self.theta_out
        y = np.zeros((n, k))
        y[np.arange(n), self.y_labels - 1] = self.theta_in
        self.Z, self.Y = z, y

    @property
    def n(self) -> int:
        return self.z_labels.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[0]

    def validate(self):
        for labels in (self.z_labels, self.y_labels):
            if labels.min() < 1 or labels.max() > self.k:
                raise SimError("labels must lie in [1, k]")
        if self.theta_out.min() < 1.0 or self.theta_in.min() < 1.0:
            raise SimError("degree propensities must be at least 1")
        s = np.linalg.svd(self.B, compute_uv=False)
        if s[-1] <= 1e-8 * s[0]:
            raise SimError("mixing matrix lost rank")
        return self

    def expected_block(self, rows, cols):
        return (self.Z[rows] @ self.B) @ self.Y[cols].T

    def expected_matrix(self):
        return self.expected_block(slice(None), slice(None))

    def svd(self) -> LowRankFactors:
        """Exact top-k SVD of the expected matrix, never materializing it."""
        qz, rz = np.linalg.qr(self.Z)
        qy, ry = np.linalg.qr(self.Y)
        u, s, vt = np.linalg.svd(rz @ self.B @ ry.T)
        return LowRankFactors(qz @ u, s, qy @ vt.T)


def sample_truth(cfg: SimConfig, rng=None) -> CoSbmTruth:
    """Draw labels and propensities, then rescale the mixer to hit delta.

    Each node gets one community label, shared by its sending and receiving
    sides, and one degree propensity used for both directions.  Direction
    asymmetry therefore comes from the mixing matrix alone (one-way bridge
    entries for k >= 3), leaving the expected network mostly symmetric.

    The rescaling constant is computed from the realized draw (diagonal
    excluded, since self-edges are forced to zero), so the expected number
    of edges per node equals delta conditionally on labels and thetas.
    """
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n, k = cfg.n, cfg.k
    z_labels = rng.integers(1, k + 1, n)
    y_labels = z_labels.copy()
    theta_out = cfg.theta_shift + rng.exponential(cfg.theta_mean, n)
    theta_in = theta_out.copy()

    b0 = pattern_matrix(cfg)
    g = np.bincount(z_labels - 1, weights=theta_out, minlength=k)
    h = np.bincount(y_labels - 1, weights=theta_in, minlength=k)
    total = g @ b0 @ h
    diag = np.sum(theta_out * b0[z_labels - 1, y_labels - 1] * theta_in)
    scale = cfg.delta * n / (total - diag)
    return CoSbmTruth(z_labels, y_labels, theta_out, theta_in,
                      scale * b0).validate()


def sample_cosbm(cfg: SimConfig, rng=None):
    """Sample a full network: independent Poisson counts, zero diagonal."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    truth = sample_truth(cfg, rng)
    expected = truth.expected_matrix()
    if expected.max() > 1e6:
        warnings.warn("expected counts exceed 1e6; delta is likely too large",
                      RuntimeWarning)
    a_full = rng.poisson(expected).astype(float)
    np.fill_diagonal(a_full, 0.0)
    return a_full, truth


def mask_chronological(a_full, truth=None) -> PartialAdjacency:
    """Keep the strict upper triangle, record the diagonal as observed zero.

    Node index is time rank (newest first), so everything strictly below
    the diagonal becomes missing.  Diagonal values are discarded; the cell
    itself stays observed with value zero.
    """
    a_full = np.asarray(a_full, dtype=float)
    n = a_full.shape[0]
    if a_full.shape != (n, n):
        raise SimError("adjacency must be square")
    iu, ju = np.triu_indices(n, k=1)
    vals = a_full[iu, ju]
    nz = vals != 0
    diag = np.arange(n)
    return PartialAdjacency(n, iu[nz], ju[nz], vals[nz],
                            lower_rows=diag, lower_cols=diag)


def estimator_zero_imputed(adj: PartialAdjacency, k, seed=None,
                           svd_tol=1e-8, max_krylov_iters=4000):
    """Rank-k SVD with every unobserved cell treated as zero."""
    return truncated_svd(adj.sparse(), k, svd_tol=svd_tol,
                         max_krylov_iters=max_krylov_iters, seed=seed)


def estimator_symmetrized(adj: PartialAdjacency, k, seed=None,
                          svd_tol=1e-8, max_krylov_iters=4000):
    """Rank-k SVD after reflecting observed cells into missing ones.

    Each missing cell (i, j) below the diagonal takes the observed value
    A[j, i]; cells that were actually observed keep their own values.
    """
    from scipy import sparse

    n = adj.n
    a = adj.sparse().tocoo()
    upper = a.row < a.col
    mirror_keys = a.col[upper].astype(np.int64) * n + a.row[upper]
    l_rows, l_cols = adj.lower_cells()
    observed_lower = l_rows.astype(np.int64) * n + l_cols
    keep = ~np.isin(mirror_keys, observed_lower)
    rows = np.concatenate([a.row, a.col[upper][keep]])
    cols = np.concatenate([a.col, a.row[upper][keep]])
    vals = np.concatenate([a.data, a.data[upper][keep]])
    sym = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return truncated_svd(sym, k, svd_tol=svd_tol,
                         max_krylov_iters=max_krylov_iters, seed=seed)


def estimator_oracle(a_full, k, seed=None, svd_tol=1e-8,
                     max_krylov_iters=4000):
    """Rank-k SVD of the fully observed matrix; the unattainable baseline."""
    return truncated_svd(np.asarray(a_full, dtype=float), k, svd_tol=svd_tol,
                         max_krylov_iters=max_krylov_iters, seed=seed)


def coupon_check(cfg: SimConfig, ell, reps, tol=1e-8) -> float:
    """Fraction of sampled truths whose top-right block keeps full rank.

    The block takes the ell newest rows against the ell + 1 oldest
    columns of the expected matrix; rank k there is what makes the
    unobserved corner recoverable.
    """
    ell = int(ell)
    if ell < 1 or ell > cfg.n // 2:
        raise SimError("ell must lie in [1, n/2]")
    hits = 0
    for rep in range(int(reps)):
        truth = sample_truth(cfg, np.random.default_rng([cfg.seed, 7919, rep]))
        block = truth.expected_block(np.arange(ell),
                                     np.arange(cfg.n - ell - 1, cfg.n))
        s = np.linalg.svd(block, compute_uv=False)
        rank = int(np.sum(s > tol * s[0])) if s[0] > 0 else 0
        hits += int(rank == cfg.k)
    return hits / reps


def two_block_counterexample(n, permuted=False, rng=None):
    """Expected matrix of two equal blocks segregated in time.

    With block membership aligned to the time order, every top-right
    block of the expectation misses one block entirely, so no clipping
    level can identify the factors.  Relabeling nodes at random destroys
    the segregation and small clipping levels become sufficient.
    """
    if n < 4 or n % 2:
        raise SimError("need even n >= 4")
    half = n // 2
    labels = np.repeat([1, 2], half)
    ones = np.ones(n)
    truth = CoSbmTruth(labels, labels.copy(), ones, ones.copy(),
                       0.8 * np.eye(2))
    expected = truth.expected_matrix()
    if permuted:
        if rng is None:
            rng = np.random.default_rng(0)
        perm = rng.permutation(n)
        expected = expected[perm][:, perm]
    return expected


def _standardize_columns(mat, rows):
    """Rescale columns to norm sqrt(|rows|) over the given rows."""
    out = np.array(mat, dtype=float, copy=True)
    target = np.sqrt(len(rows))
    for c in range(out.shape[1]):
        nrm = np.linalg.norm(out[rows, c])
        if nrm > 0:
            out[:, c] *= target / nrm
    return out


ESTIMATORS = ("oracle", "adaptive_impute", "symmetrized", "zero_imputed")


def _delta_key(delta) -> int:
    return int(round(float(delta) * 65536))


def _check_estimators(estimators):
    if estimators is None:
        return ESTIMATORS
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise SimError(f"unknown estimators: {unknown}")
    if not estimators:
        raise SimError("estimator list is empty")
    return tuple(estimators)


def run_replicate(n, k, delta, rep, seed=0, epsilon=1e-7, max_iters=200,
                  svd_tol=1e-8, out_dir=None, estimators=None):
    """Run all estimators on one simulated draw and score them.

    Returns (rows, failures): one metric dict per estimator that ran to
    completion, and one failure record per estimator that raised.  Losses
    are computed on the rows surviving the ell = n/10 clip on the
    relevant side for every estimator, so the comparison is like for
    like.  Each replicate owns an independent RNG stream derived from
    (seed, n, k, delta, rep).
    """
    estimators = _check_estimators(estimators)
    cfg = SimConfig(n=n, k=k, delta=delta, seed=seed).validate()
    rng = np.random.default_rng([seed, n, k, _delta_key(delta), rep])
    svd_seed = int(rng.integers(2**31 - 1))
    a_full, truth = sample_cosbm(cfg, rng)
    adj = mask_chronological(a_full)
    ell = cfg.ell

    idz = np.arange(0, n - ell)
    idy = np.arange(ell, n)
    truth_svd = truth.svd()
    z_true = _standardize_columns(truth.Z, idz)
    y_true = _standardize_columns(truth.Y, idy)

    if out_dir is not None:
        write_replicate(out_dir, cfg, rep, adj, truth)

    def fit_one(name):
        if name == "oracle":
            factors = estimator_oracle(a_full, k, seed=svd_seed,
                                       svd_tol=svd_tol)
            clip_info = None
        elif name == "zero_imputed":
            factors = estimator_zero_imputed(adj, k, seed=svd_seed,
                                             svd_tol=svd_tol)
            clip_info = None
        elif name == "symmetrized":
            factors = estimator_symmetrized(adj, k, seed=svd_seed,
                                            svd_tol=svd_tol)
            clip_info = None
        else:
            clipped = clip(adj, ell)
            factors, _ = adaptive_impute(clipped, FitConfig(
                k=k, epsilon=epsilon, max_iters=max_iters, seed=svd_seed,
                svd_tol=svd_tol, max_krylov_iters=2000))
            clip_info = clipped
        model = build_cofactors(factors, clip_info)
        return factors, model

    rows, failures = [], []
    for name in estimators:
        tic = time.perf_counter()
        try:
            factors, model = fit_one(name)
        except Exception as exc:  # noqa: BLE001 - logged, never averaged
            failures.append(dict(n=n, k=k, delta=delta, rep=rep,
                                 estimator=name, error=repr(exc)))
            continue
        seconds = time.perf_counter() - tic
        s_loss = subspace_loss(truth_svd.U, factors.U, truth_svd.V, factors.V,
                               rows_u=idz, rows_v=idy)
        f_loss = factor_rmse(z_true, _standardize_columns(model.Z_hat, idz),
                             y_true, _standardize_columns(model.Y_hat, idy),
                             rows_z=idz, rows_y=idy)
        rows.append(dict(n=n, k=k, delta=delta, estimator=name, rep=rep,
                         subspace_loss=float(s_loss),
                         factor_rmse=float(f_loss),
                         seconds=float(seconds)))
    return rows, failures


def run_grid(ns, ks, deltas, reps, seed=0, threads=1, epsilon=1e-7,
             max_iters=200, svd_tol=1e-8, out_dir=None, progress=None,
             estimators=None):
    """Sweep the grid; returns (metric rows, failure records), both sorted."""
    estimators = _check_estimators(estimators)
    jobs = [(n, k, d, rep)
            for n in ns for k in ks for d in deltas for rep in range(reps)]
    rows, failures = [], []

    def handle(result):
        job_rows, job_failures = result
        rows.extend(job_rows)
        failures.extend(job_failures)
        if progress is not None:
            progress(len(rows) + len(failures), len(jobs) * len(estimators))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for result in pool.map(
                    lambda j: run_replicate(*j, seed=seed, epsilon=epsilon,
                                            max_iters=max_iters,
                                            svd_tol=svd_tol, out_dir=out_dir,
                                            estimators=estimators),
                    jobs):
                handle(result)
    else:
        for job in jobs:
            handle(run_replicate(*job, seed=seed, epsilon=epsilon,
                                 max_iters=max_iters, svd_tol=svd_tol,
                                 out_dir=out_dir, estimators=estimators))

    order = {name: i for i, name in enumerate(ESTIMATORS)}
    rows.sort(key=lambda r: (r["n"], r["k"], r["delta"], r["rep"],
                             order[r["estimator"]]))
    failures.sort(key=lambda r: (r["n"], r["k"], r["delta"], r["rep"],
                                 order[r["estimator"]]))
    return rows, failures


AGGREGATE_FIELDS = ("n", "k", "delta", "estimator", "reps",
                    "subspace_loss_mean", "subspace_loss_sd",
                    "factor_rmse_mean", "factor_rmse_sd", "seconds_mean")


def aggregate_rows(rows):
    """Per-cell mean and sd of both losses, one row per estimator."""
    groups = {}
    for row in rows:
        key = (row["n"], row["k"], row["delta"], row["estimator"])
        groups.setdefault(key, []).append(row)
    order = {name: i for i, name in enumerate(ESTIMATORS)}
    out = []
    for key in sorted(groups, key=lambda t: (t[0], t[1], t[2], order[t[3]])):
        n, k, delta, estimator = key
        cell = groups[key]
        s = np.array([r["subspace_loss"] for r in cell])
        f = np.array([r["factor_rmse"] for r in cell])
        t = np.array([r["seconds"] for r in cell])
        out.append(dict(
            n=n, k=k, delta=delta, estimator=estimator, reps=len(cell),
            subspace_loss_mean=float(s.mean()),
            subspace_loss_sd=float(s.std(ddof=1)) if len(cell) > 1 else 0.0,
            factor_rmse_mean=float(f.mean()),
            factor_rmse_sd=float(f.std(ddof=1)) if len(cell) > 1 else 0.0,
            seconds_mean=float(t.mean()),
        ))
    return out


def cell_name(n, k, delta) -> str:
    d = float(delta)
    d_txt = str(int(d)) if d.is_integer() else repr(d)
    return f"n{n}_k{k}_delta{d_txt}"


def write_truth(truth: CoSbmTruth, out_dir):
    """Write truth.csv (per-node draw) and b_matrix.csv under out_dir."""
    import csv

    os.makedirs(out_dir, exist_ok=True)
    t_path = os.path.join(out_dir, "truth.csv")
    with open(t_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node_id", "z_label", "y_label",
                         "theta_out", "theta_in"])
        for i in range(truth.n):
            writer.writerow([str(i + 1), int(truth.z_labels[i]),
                             int(truth.y_labels[i]),
                             repr(float(truth.theta_out[i])),
                             repr(float(truth.theta_in[i]))])
    b_path = os.path.join(out_dir, "b_matrix.csv")
    with open(b_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in truth.B:
            writer.writerow([repr(float(v)) for v in row])
    return [t_path, b_path]


def write_replicate(out_dir, cfg: SimConfig, rep, adj, truth):
    rep_dir = os.path.join(out_dir, cell_name(cfg.n, cfg.k, cfg.delta),
                           f"rep{rep:03d}")
    os.makedirs(rep_dir, exist_ok=True)
    write_edge_list(adj, os.path.join(rep_dir, "edges.csv"),
                    sidecar_path=os.path.join(rep_dir, "sidecar.json"))
    write_truth(truth, rep_dir)
    return rep_dir
