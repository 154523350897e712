"""Command line front end.

Subcommands
-----------
fit             ingest an edge list, complete the matrix, rotate, export
simulate        sweep the co-blockmodel grid and score every estimator
bench           time and measure one completion iteration per representation
impute-forward  rank nodes by model-imputed in-degree
ingest-check    validate an edge list and report ingestion statistics

Configuration is a JSON/flag hybrid: ``--config`` names a JSON file whose
keys mirror RunConfig, explicit flags override it, and the effective config
is echoed into the output directory so a run can be reproduced from its
artifacts alone. Exit codes: 0 success, 2 invalid input or configuration,
3 non-convergence (partial report still written), 4 output I/O failure.
"""

from __future__ import annotations

import argparse
import gc
import json
import os
import sys
import time
import tracemalloc
from dataclasses import asdict, dataclass, fields

import numpy as np

from .adaptive_impute import FitConfig, FitError, adaptive_impute
from .cosbm_sim import (AGGREGATE_FIELDS, ESTIMATORS, SimError,
                        aggregate_rows, run_grid)
from .eval_metrics import MetricError, write_metric_rows
from .graph_store import (GraphStoreError, IngestError, PartialAdjacency,
                          clip, from_edge_list, read_edge_list)
from .implicit_op import ImpliedMatrix
from .svd_engine import LowRankFactors, SvdError, as_operator, truncated_svd
from .varimax_factors import (FactorError, build_cofactors, imputed_indegree,
                              read_cofactors, write_cofactors)

COMMANDS = ("fit", "simulate", "bench", "impute-forward", "ingest-check")


class ConfigError(Exception):
    """Bad flag or JSON configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    """Effective settings for one command invocation.

    Values resolve in three layers: dataclass defaults, then the --config
    JSON object, then explicit flags. Unknown JSON keys are rejected so a
    typo cannot silently fall back to a default.
    """

    command: str
    edges: str | None = None
    times: str | None = None
    k: int | None = None
    ell: int | None = None
    epsilon: float = 1e-7
    max_iters: int = 200
    seed: int = 0
    out: str | None = None
    threads: int | None = None
    fixed_alpha: float | None = None
    svd_tol: float = 1e-8
    grid: dict | None = None
    model: str | None = None
    top_m: int = 15
    sizes: tuple = (500, 1000, 2000)
    per_row: int = 40
    mem_budget: float = 1.5e9

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.k is not None and self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.ell is not None and self.ell < 0:
            raise ConfigError(f"ell must be >= 0, got {self.ell}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.max_iters < 1:
            raise ConfigError("max-iters must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.svd_tol > 0:
            raise ConfigError("svd_tol must be positive")
        if self.top_m < 0:
            raise ConfigError("top-m must be >= 0")
        if self.per_row < 1:
            raise ConfigError("per-row must be >= 1")
        if not self.sizes or any(int(s) < 10 for s in self.sizes):
            raise ConfigError("sizes must be integers >= 10")
        if not self.mem_budget > 0:
            raise ConfigError("mem-budget must be positive")
        return self

    @property
    def effective_threads(self) -> int:
        if self.threads is not None:
            return self.threads
        env = os.environ.get("COFACTOR_THREADS")
        if env:
            try:
                value = int(env)
            except ValueError:
                raise ConfigError(
                    f"COFACTOR_THREADS must be an integer, got {env!r}")
            if value < 1:
                raise ConfigError("COFACTOR_THREADS must be >= 1")
            return value
        return 1


def _load_json_object(path_or_text, what):
    """Accept either inline JSON or a path to a JSON file."""
    text = path_or_text
    if not text.lstrip().startswith("{"):
        try:
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {what} {path_or_text!r}: {exc}")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {what}: {exc}")
    if not isinstance(obj, dict):
        raise ConfigError(f"{what} must be a JSON object")
    return obj


def make_config(command, config=None, **flag_values) -> RunConfig:
    """Merge defaults, a JSON config and explicit flag values."""
    allowed = {f.name for f in fields(RunConfig)} - {"command"}
    data = {}
    if config is not None:
        data = _load_json_object(config, "config")
        file_command = data.pop("command", None)
        if file_command is not None and file_command != command:
            raise ConfigError(
                f"config file is for {file_command!r}, not {command!r}")
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
    for key, value in flag_values.items():
        if value is not None:
            data[key] = value
    if isinstance(data.get("grid"), str):
        data["grid"] = _load_json_object(data["grid"], "grid")
    if "sizes" in data:
        raw = data["sizes"]
        if isinstance(raw, str):
            raw = [part for part in raw.split(",") if part.strip()]
        try:
            data["sizes"] = tuple(int(s) for s in raw)
        except (TypeError, ValueError):
            raise ConfigError(f"bad sizes value {data['sizes']!r}")
    try:
        cfg = RunConfig(command=command, **data)
    except TypeError as exc:
        raise ConfigError(str(exc))
    return cfg.validate()


def _write_json_file(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _echo_config(cfg: RunConfig):
    if cfg.out is None:
        return
    os.makedirs(cfg.out, exist_ok=True)
    payload = asdict(cfg)
    payload["sizes"] = list(cfg.sizes)
    _write_json_file(os.path.join(cfg.out, "effective_config.json"), payload)


def _require(cfg: RunConfig, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise ConfigError(
                f"{cfg.command} requires --{name.replace('_', '-')}")


def _ingest(cfg: RunConfig) -> PartialAdjacency:
    try:
        edges = read_edge_list(cfg.edges, cfg.times)
    except OSError as exc:
        raise IngestError(f"cannot read input: {exc}")
    return from_edge_list(edges)


def cmd_ingest_check(cfg: RunConfig) -> int:
    _require(cfg, "edges")
    adj = _ingest(cfg)
    stats = adj.ingest
    payload = {
        "n": adj.n,
        "nnz": adj.nnz,
        "n_observed": adj.n_observed,
        "records": stats.n_records,
        "dropped_self_loops": stats.dropped_self_loops,
        "duplicate_edges": stats.duplicate_edges,
        "lower_ties": stats.lower_ties,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if cfg.out is not None:
        _echo_config(cfg)
        _write_json_file(os.path.join(cfg.out, "ingest_check.json"), payload)
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    _require(cfg, "edges", "k", "out")
    adj = _ingest(cfg)
    if cfg.k > adj.n:
        raise ConfigError(f"k={cfg.k} exceeds the node count n={adj.n}")
    ell = cfg.ell if cfg.ell is not None else adj.n // 10
    clipped = clip(adj, ell)
    fit_cfg = FitConfig(k=cfg.k, epsilon=cfg.epsilon, max_iters=cfg.max_iters,
                        seed=cfg.seed, fixed_alpha=cfg.fixed_alpha,
                        svd_tol=cfg.svd_tol, max_krylov_iters=4000)
    _echo_config(cfg)
    report_path = os.path.join(cfg.out, "fit_report.json")
    try:
        factors, report = adaptive_impute(clipped, fit_cfg)
    except FitError as exc:
        if exc.report is None:
            raise
        _write_json_file(report_path, json.loads(exc.report.to_json()))
        print(f"fit: degenerate fit, partial report in {cfg.out}: {exc}",
              file=sys.stderr)
        return 3
    model = build_cofactors(factors, clipped)
    write_cofactors(model, cfg.out, node_order=adj.node_order)
    _write_json_file(report_path, json.loads(report.to_json()))
    print(f"fit: n={adj.n} k={cfg.k} ell={ell} iters={report.n_iters} "
          f"converged={report.converged} out={cfg.out}")
    if not report.converged:
        print(f"fit: no convergence within {cfg.max_iters} iterations",
              file=sys.stderr)
        return 3
    return 0


GRID_DEFAULTS = {
    "n": (1000, 2000),
    "k": (2, 5),
    "delta": (20, 40, 80, 160),
    "reps": 20,
    "estimators": ESTIMATORS,
}


def _as_list(value):
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _parse_grid(grid):
    grid = dict(grid or {})
    unknown = sorted(set(grid) - set(GRID_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown grid keys: {unknown}")
    merged = {**GRID_DEFAULTS, **grid}
    ns = [int(v) for v in _as_list(merged["n"])]
    ks = [int(v) for v in _as_list(merged["k"])]
    deltas = _as_list(merged["delta"])
    reps = int(merged["reps"])
    estimators = tuple(_as_list(merged["estimators"]))
    if not ns or not ks or not deltas:
        raise ConfigError("grid lists must be nonempty")
    if any(k < 2 for k in ks):
        raise ConfigError("grid k values must be >= 2")
    if reps < 1:
        raise ConfigError("grid reps must be >= 1")
    bad = sorted(set(estimators) - set(ESTIMATORS))
    if bad:
        raise ConfigError(f"unknown estimators: {bad}")
    return ns, ks, deltas, reps, estimators


def _write_plot_data(path, agg, estimators, metric):
    """One row per grid cell, one mean/sd column pair per estimator."""
    cells = {}
    for row in agg:
        key = (row["n"], row["k"], row["delta"])
        cells.setdefault(key, {})[row["estimator"]] = row
    header = ["panel", "n", "k", "delta"]
    for est in estimators:
        header += [f"{est}_mean", f"{est}_sd"]
    out_rows = []
    for (n, k, delta) in sorted(cells):
        row = {"panel": f"n{n}_k{k}", "n": n, "k": k, "delta": delta}
        for est in estimators:
            cell = cells[(n, k, delta)].get(est)
            row[f"{est}_mean"] = "" if cell is None else cell[f"{metric}_mean"]
            row[f"{est}_sd"] = "" if cell is None else cell[f"{metric}_sd"]
        out_rows.append(row)
    write_metric_rows(path, out_rows, fields=tuple(header))


def cmd_simulate(cfg: RunConfig) -> int:
    _require(cfg, "out")
    ns, ks, deltas, reps, estimators = _parse_grid(cfg.grid)
    _echo_config(cfg)
    rows, failures = run_grid(ns, ks, deltas, reps, seed=cfg.seed,
                              threads=cfg.effective_threads,
                              epsilon=cfg.epsilon, max_iters=cfg.max_iters,
                              svd_tol=cfg.svd_tol, estimators=estimators)
    key_fields = ("n", "k", "delta", "estimator", "rep")
    write_metric_rows(os.path.join(cfg.out, "metrics.csv"), rows,
                      fields=key_fields + ("subspace_loss", "factor_rmse"))
    write_metric_rows(os.path.join(cfg.out, "timings.csv"), rows,
                      fields=key_fields + ("seconds",))
    agg = aggregate_rows(rows)
    agg_fields = tuple(f for f in AGGREGATE_FIELDS if f != "seconds_mean")
    write_metric_rows(os.path.join(cfg.out, "aggregate.csv"), agg,
                      fields=agg_fields)
    for metric in ("subspace_loss", "factor_rmse"):
        _write_plot_data(os.path.join(cfg.out, f"plot_{metric}.csv"),
                         agg, estimators, metric)
    if failures:
        write_metric_rows(os.path.join(cfg.out, "failures.csv"), failures,
                          fields=key_fields + ("error",))
    print(f"simulate: cells={len(ns) * len(ks) * len(deltas)} "
          f"rows={len(rows)} failures={len(failures)} out={cfg.out}")
    return 0


BENCH_VARIANTS = ("implicit", "dense", "sparse_explicit")
BENCH_FIELDS = ("variant", "n", "k", "per_row", "status", "seconds",
                "peak_bytes", "matvecs")


def bench_instance(n, k, per_row, seed=0):
    """Synthetic upper-triangle observations plus a rank-k iterate.

    Each row gets per_row uniformly placed nonzero cells to its right
    (fewer near the bottom where no room is left), the diagonal is an
    observed zero, and the factors are a random orthonormal pair.
    """
    rng = np.random.default_rng([seed, n, k, per_row])
    rows, cols = [], []
    for i in range(n - 1):
        avail = n - 1 - i
        m = min(per_row, avail)
        rows.append(np.full(m, i, dtype=np.int64))
        cols.append(rng.choice(avail, size=m, replace=False) + i + 1)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = rng.poisson(2.0, rows.size) + 1.0
    diag = np.arange(n)
    adj = PartialAdjacency(n, rows, cols, vals,
                           lower_rows=diag, lower_cols=diag)
    qu, _ = np.linalg.qr(rng.standard_normal((n, k)))
    qv, _ = np.linalg.qr(rng.standard_normal((n, k)))
    # scale with the data's spectral bulk (set by per-row density, not n)
    # so the SVD does comparable work at every size
    d = np.sort(rng.uniform(1.0, 2.0, k))[::-1] * 24.0 * np.sqrt(per_row)
    return adj, LowRankFactors(qu, d, qv)


class _CountingOp:
    def __init__(self, op):
        self._op = as_operator(op)
        self.shape = self._op.shape
        self.calls = 0

    def matvec(self, x):
        self.calls += 1
        return self._op.matvec(x)

    def rmatvec(self, x):
        self.calls += 1
        return self._op.rmatvec(x)


class _SparseExplicitOp:
    """Implied matrix as an explicit-entry CSR plus the low-rank tail.

    Every observed cell gets a stored entry (zero observations included),
    so storage is O(n^2) by construction; this is the naive sparse
    materialization the implicit scheme avoids.
    """

    def __init__(self, adj: PartialAdjacency, z: LowRankFactors,
                 block: int = 256):
        from scipy import sparse

        n = adj.n
        self.shape = (n, n)
        a = adj.sparse()
        l_rows, l_cols = adj.lower_cells()
        lower_by_row = {}
        for r, c in zip(l_rows.tolist(), l_cols.tolist()):
            lower_by_row.setdefault(r, []).append(c)
        dvt = z.D[:, None] * z.V.T
        blocks = []
        for r0 in range(0, n, block):
            r1 = min(r0 + block, n)
            dense = -(z.U[r0:r1] @ dvt)
            sub = a[r0:r1].tocoo()
            dense[sub.row, sub.col] += sub.data
            mask = np.zeros((r1 - r0, n), dtype=bool)
            for i in range(r0, r1):
                mask[i - r0, i + 1:] = True
                for c in lower_by_row.get(i, ()):
                    mask[i - r0, c] = True
            rows_local, cols_local = np.nonzero(mask)
            blocks.append(sparse.csr_matrix(
                (dense[rows_local, cols_local], (rows_local, cols_local)),
                shape=(r1 - r0, n)))
        self._s = sparse.vstack(blocks, format="csr")
        self._z = z
        self._dvt = dvt
        self._dut = z.D[:, None] * z.U.T

    def matvec(self, x):
        return self._s @ x + self._z.U @ (self._dvt @ x)

    def rmatvec(self, x):
        return self._s.T @ x + self._z.V @ (self._dut @ x)


def bench_iteration(variant, adj, z, k, svd_tol=1e-8, max_krylov_iters=2000,
                    seed=0):
    """One completion iteration under the given matrix representation.

    All variants compute the same map (same SVD engine, same shrinkage),
    differing only in how the implied matrix is represented. Returns
    (new factors, alpha, matvec count).
    """
    n = adj.n
    v0 = z.V[:, 0]
    if variant == "implicit":
        op = ImpliedMatrix(adj, z)
        counting = _CountingOp(op)
        f = truncated_svd(counting, k, svd_tol=svd_tol,
                          max_krylov_iters=max_krylov_iters, seed=seed, v0=v0)
        lam_sq = f.D**2
        alpha = op.alpha(lam_sq)
    elif variant == "dense":
        dense = ImpliedMatrix(adj, z).dense_oracle(cap=n)
        counting = _CountingOp(dense)
        f = truncated_svd(counting, k, svd_tol=svd_tol,
                          max_krylov_iters=max_krylov_iters, seed=seed, v0=v0)
        lam_sq = f.D**2
        total = np.sum(np.square(dense, dtype=np.longdouble))
        alpha = float((total - np.sum(lam_sq, dtype=np.longdouble)) / (n - k))
    elif variant == "sparse_explicit":
        counting = _CountingOp(_SparseExplicitOp(adj, z))
        f = truncated_svd(counting, k, svd_tol=svd_tol,
                          max_krylov_iters=max_krylov_iters, seed=seed, v0=v0)
        lam_sq = f.D**2
        alpha = ImpliedMatrix(adj, z).alpha(lam_sq)
    else:
        raise ConfigError(f"unknown bench variant {variant!r}")
    lam = np.sqrt(np.clip(lam_sq - alpha, 0.0, None))
    return LowRankFactors(f.U, lam, f.V), float(alpha), counting.calls


def _estimated_bytes(variant, n):
    # deliberate overestimates; an attempt that would brush against the
    # budget is reported as memory bound instead of risking the OOM killer
    if variant == "dense":
        return 18 * n * n
    if variant == "sparse_explicit":
        return 26 * (n * (n - 1) // 2 + n)
    return 0


def bench_variants(n, k, per_row, seed=0, svd_tol=1e-8, max_krylov_iters=2000,
                   mem_budget=1.5e9, variants=BENCH_VARIANTS):
    """Measure one iteration per representation at one problem size.

    Timing and peak-memory runs are separate so tracemalloc overhead never
    pollutes the clock. Variants whose projected allocations exceed
    mem_budget are reported as "memory bound" without being attempted.
    """
    adj, z = bench_instance(n, k, per_row, seed=seed)
    out = []
    for variant in variants:
        row = dict(variant=variant, n=n, k=k, per_row=per_row, status="ok",
                   seconds="", peak_bytes="", matvecs="")
        if _estimated_bytes(variant, n) > mem_budget:
            row["status"] = "memory bound"
            out.append(row)
            continue
        try:
            gc.collect()
            tic = time.perf_counter()
            _, _, calls = bench_iteration(variant, adj, z, k, svd_tol=svd_tol,
                                          max_krylov_iters=max_krylov_iters,
                                          seed=seed)
            seconds = time.perf_counter() - tic
            gc.collect()
            tracemalloc.start()
            try:
                bench_iteration(variant, adj, z, k, svd_tol=svd_tol,
                                max_krylov_iters=max_krylov_iters, seed=seed)
                peak = tracemalloc.get_traced_memory()[1]
            finally:
                tracemalloc.stop()
        except MemoryError:
            row["status"] = "memory bound"
            out.append(row)
            continue
        row.update(seconds=float(seconds), peak_bytes=int(peak),
                   matvecs=int(calls))
        out.append(row)
    return out


def cmd_bench(cfg: RunConfig) -> int:
    _require(cfg, "out")
    k = cfg.k if cfg.k is not None else 10
    _echo_config(cfg)
    rows = []
    for n in cfg.sizes:
        if n <= k:
            raise ConfigError(f"bench size n={n} must exceed k={k}")
        rows.extend(bench_variants(n, k, cfg.per_row, seed=cfg.seed,
                                   svd_tol=cfg.svd_tol,
                                   mem_budget=cfg.mem_budget))
    write_metric_rows(os.path.join(cfg.out, "bench.csv"), rows,
                      fields=BENCH_FIELDS)
    for row in rows:
        print(f"bench: {row['variant']:<16} n={row['n']:>7} "
              f"status={row['status']} seconds={row['seconds']} "
              f"peak_bytes={row['peak_bytes']}")
    return 0


def cmd_impute_forward(cfg: RunConfig) -> int:
    _require(cfg, "model", "edges", "out")
    try:
        model, node_order = read_cofactors(cfg.model)
    except OSError as exc:
        raise ConfigError(f"cannot read model files: {exc}")
    adj = _ingest(cfg)
    if adj.n != model.n or list(adj.node_order) != list(node_order):
        raise IngestError("edge list node order does not match the model")
    observed_in = np.asarray(adj.sparse().sum(axis=0)).ravel()
    imputed = imputed_indegree(model)
    identified = ~np.isnan(imputed)
    masked = np.where(identified, imputed, -np.inf)
    ranked = np.argsort(-masked, kind="stable")

    rows = []
    for rank, i in enumerate(ranked[:cfg.top_m], start=1):
        cited_by = float(observed_in[i])
        rows.append({
            "rank": rank,
            "node_id": node_order[i],
            "imputed": float(imputed[i]) if identified[i] else "",
            "cited_by": int(cited_by) if cited_by.is_integer() else cited_by,
            "identified": bool(identified[i]),
        })
    _echo_config(cfg)
    write_metric_rows(os.path.join(cfg.out, "top_citations.csv"), rows,
                      fields=("rank", "node_id", "imputed", "cited_by",
                              "identified"))
    print(f"impute-forward: ranked {len(rows)} of {model.n} nodes "
          f"out={cfg.out}")
    return 0


_DISPATCH = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "impute-forward": cmd_impute_forward,
    "ingest-check": cmd_ingest_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cofactor",
        description="Co-factor analysis of partially observed directed "
                    "networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="JSON",
                        help="JSON config (file path or inline object); "
                             "flags override its values")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--threads", type=int,
                        help="worker threads (fallback: COFACTOR_THREADS)")

    fit = sub.add_parser("fit", help="complete and rotate a citation matrix")
    common(fit)
    fit.add_argument("--edges", metavar="CSV")
    fit.add_argument("--times", metavar="CSV")
    fit.add_argument("--k", type=int)
    fit.add_argument("--ell", type=int,
                     help="clip width (default: n // 10)")
    fit.add_argument("--epsilon", type=float)
    fit.add_argument("--max-iters", type=int)
    fit.add_argument("--fixed-alpha", type=float,
                     help="disable alpha estimation (soft-impute mode)")

    sim = sub.add_parser("simulate", help="co-blockmodel estimator sweep")
    common(sim)
    sim.add_argument("--grid", metavar="JSON",
                     help='grid spec, e.g. {"n":[500],"k":[2],"delta":[40],'
                          '"reps":5}')
    sim.add_argument("--epsilon", type=float)
    sim.add_argument("--max-iters", type=int)

    bench = sub.add_parser("bench",
                           help="single-iteration time/memory comparison")
    common(bench)
    bench.add_argument("--sizes", metavar="N1,N2,...",
                       help="problem sizes (default: 500,1000,2000)")
    bench.add_argument("--k", type=int, help="rank (default: 10)")
    bench.add_argument("--per-row", type=int,
                       help="observed nonzeros per row (default: 40)")
    bench.add_argument("--mem-budget", type=float,
                       help="naive-variant allocation cap in bytes")

    imp = sub.add_parser("impute-forward",
                         help="rank nodes by imputed in-degree")
    common(imp)
    imp.add_argument("--model", metavar="DIR",
                     help="directory written by the fit command")
    imp.add_argument("--edges", metavar="CSV")
    imp.add_argument("--times", metavar="CSV")
    imp.add_argument("--top-m", type=int)

    chk = sub.add_parser("ingest-check", help="validate an edge list")
    common(chk)
    chk.add_argument("--edges", metavar="CSV")
    chk.add_argument("--times", metavar="CSV")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flag_values = {key: value for key, value in vars(args).items()
                   if key not in ("command", "config")}
    try:
        cfg = make_config(args.command, config=args.config, **flag_values)
        return _DISPATCH[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, GraphStoreError, SimError, MetricError, FactorError,
            FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SvdError as exc:
        print(f"error: svd stage did not converge: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
