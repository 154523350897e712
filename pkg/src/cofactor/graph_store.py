"""Data model and ingestion for adjacency matrices observed chronologically.

Documents are indexed so that index 1 is the newest (times nonincreasing in
the index). A citation from i to j then satisfies i < j except for ties in
publication time, so the observed adjacency is nearly upper triangular: the
strict upper triangle is always observed, and the only observed cells at or
below the diagonal are same-time citations, cells cleared by clipping, and
whatever zero cells a constructor marks explicitly (the simulation masker
marks the diagonal, since self-citation is structurally absent).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


class GraphStoreError(Exception):
    """Invalid data or arguments in the graph store layer."""


class IngestError(GraphStoreError):
    """Edge-list ingestion failure; ``offending`` lists the bad records."""

    def __init__(self, message, offending=None):
        super().__init__(message)
        self.offending = offending if offending is not None else []


@dataclass
class EdgeList:
    """Raw citation records plus an optional per-document timestamp table.

    ``times`` maps document id to an integer time; when present, every id
    referenced by an edge must appear in it and the table's insertion order
    breaks ties. When absent, order of first appearance in the edge records
    stands in for time (first seen = newest), which forces a strictly
    upper-triangular matrix.
    """

    citing: list
    cited: list
    weight: list | None = None
    times: dict | None = None

    def __post_init__(self):
        if len(self.citing) != len(self.cited):
            raise IngestError("citing/cited column lengths differ")
        if self.weight is not None and len(self.weight) != len(self.citing):
            raise IngestError("weight column length differs from edges")


@dataclass
class IngestStats:
    n_records: int = 0
    dropped_self_loops: int = 0
    duplicate_edges: int = 0
    lower_ties: int = 0


class PartialAdjacency:
    """Immutable partially observed adjacency matrix.

    Parameters
    ----------
    n : int
        Node count; indices are 0-based internally.
    rows, cols, vals : arrays
        Observed nonzero cells (the set usually written Omega-tilde). Cells
        with row >= col are permitted (same-time citations) and are observed
        by virtue of being stored.
    lower_rows, lower_cols : arrays
        Observed *zero* cells at or below the diagonal. Together with the
        lower nonzeros these form L; the observed set is the strict upper
        triangle union L, and everything else is missing.
    node_order : list of str, optional
        External document ids by chronological index (position 0 = newest).
    times : array, optional
        Integer timestamps aligned with chronological indices, nonincreasing.
    clip_cols, clip_rows : int
        Number of leading columns / trailing rows cleared by clipping, kept
        so downstream factor rows can be flagged unidentified.

    Notes
    -----
    Construction is the freeze step: inputs are validated, copied, and both
    row-major and column-major sparse forms are cached so left and right
    matvecs cost O(nnz). Instances must not be mutated afterwards.
    """

    def __init__(self, n, rows, cols, vals, lower_rows=(), lower_cols=(),
                 node_order=None, times=None, clip_cols=0, clip_rows=0,
                 ingest=None):
        from scipy import sparse

        self.n = int(n)
        self.rows = np.asarray(rows, dtype=np.int64).copy()
        self.cols = np.asarray(cols, dtype=np.int64).copy()
        self.vals = np.asarray(vals, dtype=np.float64).copy()
        self.lower_rows = np.asarray(lower_rows, dtype=np.int64).copy()
        self.lower_cols = np.asarray(lower_cols, dtype=np.int64).copy()
        self.node_order = list(node_order) if node_order is not None else None
        self.times = None if times is None else np.asarray(times, dtype=np.int64).copy()
        self.clip_cols = int(clip_cols)
        self.clip_rows = int(clip_rows)
        self.ingest = ingest
        self._validate()

        shape = (self.n, self.n)
        coo = sparse.coo_matrix((self.vals, (self.rows, self.cols)), shape=shape)
        self._csr = coo.tocsr()
        self._csc = coo.tocsc()
        # squared Frobenius norm of the observed nonzeros, accumulated in
        # extended precision (feeds the alpha identity downstream)
        self.frob_sq = float(np.sum(np.square(self.vals, dtype=np.longdouble)))
        mask = self.rows >= self.cols
        self._l_rows = np.concatenate([self.lower_rows, self.rows[mask]])
        self._l_cols = np.concatenate([self.lower_cols, self.cols[mask]])

    def _validate(self):
        n = self.n
        if n <= 0:
            raise GraphStoreError("n must be positive")
        if not (len(self.rows) == len(self.cols) == len(self.vals)):
            raise GraphStoreError("nonzero arrays must have equal length")
        if len(self.lower_rows) != len(self.lower_cols):
            raise GraphStoreError("lower cell arrays must have equal length")
        for idx in (self.rows, self.cols, self.lower_rows, self.lower_cols):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise GraphStoreError("cell index out of range")
        if not np.all(np.isfinite(self.vals)) or np.any(self.vals < 0):
            raise GraphStoreError("values must be finite and >= 0")
        if np.any(self.lower_rows < self.lower_cols):
            raise GraphStoreError("lower-observed cells must have row >= col")
        keys = self.rows * n + self.cols
        if np.unique(keys).size != keys.size:
            raise GraphStoreError("duplicate cells in nonzeros")
        if self.lower_rows.size:
            lkeys = self.lower_rows * n + self.lower_cols
            if np.unique(lkeys).size != lkeys.size:
                raise GraphStoreError("duplicate cells in lower-observed set")
            if np.intersect1d(keys, lkeys).size:
                raise GraphStoreError("cell listed in both nonzeros and lower-observed set")
        if self.node_order is not None and len(self.node_order) != n:
            raise GraphStoreError("node_order length must equal n")
        if self.times is not None:
            if len(self.times) != n:
                raise GraphStoreError("times length must equal n")
            if np.any(np.diff(self.times) > 0):
                raise GraphStoreError("times must be nonincreasing in chronological index")
        if not (0 <= self.clip_cols <= n and 0 <= self.clip_rows <= n):
            raise GraphStoreError("clip ranges out of range")

    @property
    def nnz(self):
        return len(self.vals)

    def sparse(self):
        """Row-major sparse form of the observed nonzeros (do not mutate)."""
        return self._csr

    def sparse_csc(self):
        """Column-major sparse form of the observed nonzeros (do not mutate)."""
        return self._csc

    def lower_cells(self):
        """All observed cells with row >= col (zero cells plus tie nonzeros)."""
        return self._l_rows, self._l_cols

    @property
    def n_observed(self):
        """|Omega|: strict upper triangle plus observed at-or-below cells."""
        return self.n * (self.n - 1) // 2 + len(self._l_rows)

    def identified_rows_z(self):
        """Row indices with identifiable outgoing factors (not clipped away)."""
        return np.arange(0, self.n - self.clip_rows)

    def identified_rows_y(self):
        """Row indices with identifiable incoming factors (not clipped away)."""
        return np.arange(self.clip_cols, self.n)

    def sidecar(self):
        order = self.node_order
        if order is None:
            order = [str(i + 1) for i in range(self.n)]
        return {
            "n": self.n,
            "nnz": self.nnz,
            "clipped_cols": self.clip_cols,
            "clipped_rows": self.clip_rows,
            "order": order,
        }

    def __eq__(self, other):
        if not isinstance(other, PartialAdjacency):
            return NotImplemented
        same_times = (
            (self.times is None and other.times is None)
            or (self.times is not None and other.times is not None
                and np.array_equal(self.times, other.times))
        )
        return (
            self.n == other.n
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.vals, other.vals)
            and np.array_equal(np.sort(self.lower_rows * self.n + self.lower_cols),
                               np.sort(other.lower_rows * other.n + other.lower_cols))
            and self.node_order == other.node_order
            and same_times
            and self.clip_cols == other.clip_cols
            and self.clip_rows == other.clip_rows
        )

    def __repr__(self):
        return (f"PartialAdjacency(n={self.n}, nnz={self.nnz}, "
                f"lower_observed={len(self._l_rows)}, "
                f"clip=({self.clip_cols},{self.clip_rows}))")


def from_edge_list(edges: EdgeList, dedupe: bool = True) -> PartialAdjacency:
    """Build a PartialAdjacency from citation records.

    Nodes are sorted by decreasing time with ties broken by order of first
    appearance, so index 0 is the newest document. Each citation i -> j is
    stored at (rank(i), rank(j)); same-time citations may land at or below
    the diagonal and their cells count as observed. Ingestion statistics
    live on the returned object's ``ingest`` attribute.

    Parameters
    ----------
    edges : EdgeList
    dedupe : bool
        When True (default) repeated records collapse to value 1; when False
        record weights (default 1 each) are summed per cell.

    Raises
    ------
    IngestError
        Unknown id (timestamps supplied), or a citation strictly forward in
        time; the error's ``offending`` attribute lists the bad edges as
        (citing_id, cited_id, t_citing, t_cited).
    """
    if edges.times is not None:
        universe = list(edges.times.keys())
        pos = {doc: i for i, doc in enumerate(universe)}
        unknown = sorted({d for d in edges.citing if d not in pos}
                         | {d for d in edges.cited if d not in pos})
        if unknown:
            raise IngestError(f"ids missing from timestamp table: {unknown[:10]}",
                              offending=unknown)
        times = np.array([edges.times[doc] for doc in universe], dtype=np.int64)
    else:
        pos = {}
        for doc in _interleave(edges.citing, edges.cited):
            if doc not in pos:
                pos[doc] = len(pos)
        universe = list(pos)
        # no timestamps: first appearance stands in for recency
        times = -np.arange(len(universe), dtype=np.int64)

    n = len(universe)
    if n == 0:
        raise IngestError("empty node universe")
    appearance = np.arange(n, dtype=np.int64)
    order = np.lexsort((appearance, -times))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n, dtype=np.int64)

    stats = IngestStats(n_records=len(edges.citing))
    src = np.array([pos[d] for d in edges.citing], dtype=np.int64)
    dst = np.array([pos[d] for d in edges.cited], dtype=np.int64)
    weights = (np.ones(len(src)) if edges.weight is None
               else np.asarray(edges.weight, dtype=np.float64))
    if src.size and (not np.all(np.isfinite(weights)) or np.any(weights < 0)):
        raise IngestError("edge weights must be finite and >= 0")

    loops = src == dst
    stats.dropped_self_loops = int(loops.sum())
    src, dst, weights = src[~loops], dst[~loops], weights[~loops]

    forward = times[dst] > times[src]
    if np.any(forward):
        idx = np.flatnonzero(forward)
        offending = [(universe[src[i]], universe[dst[i]],
                      int(times[src[i]]), int(times[dst[i]])) for i in idx]
        shown = ", ".join(f"{c}->{d}" for c, d, *_ in offending[:10])
        raise IngestError(
            f"{len(offending)} citation(s) point strictly forward in time: {shown}",
            offending=offending)

    i_idx = rank[src]
    j_idx = rank[dst]
    keys = i_idx * n + j_idx
    uniq, inverse = np.unique(keys, return_inverse=True)
    sums = np.zeros(len(uniq))
    np.add.at(sums, inverse, weights)
    stats.duplicate_edges = int(len(keys) - len(uniq))

    cell_i = uniq // n
    cell_j = uniq % n
    cell_v = np.ones(len(uniq)) if dedupe else sums
    # zero-total cells are not nonzeros; lower ones stay observed as zeros
    zero = cell_v == 0
    extra_lower_i = cell_i[zero & (cell_i >= cell_j)]
    extra_lower_j = cell_j[zero & (cell_i >= cell_j)]
    cell_i, cell_j, cell_v = cell_i[~zero], cell_j[~zero], cell_v[~zero]
    stats.lower_ties = int(np.sum(cell_i >= cell_j))

    node_order = [universe[o] for o in order]
    times_sorted = times[order] if edges.times is not None else None
    return PartialAdjacency(n, cell_i, cell_j, cell_v,
                            extra_lower_i, extra_lower_j,
                            node_order=node_order, times=times_sorted,
                            ingest=stats)


def _interleave(a, b):
    for x, y in zip(a, b):
        yield x
        yield y


def clip(adj: PartialAdjacency, ell: int) -> PartialAdjacency:
    """Zero the first ``ell`` columns and last ``ell`` rows.

    Stored entries in the cleared band are removed; cleared lower-triangle
    nonzeros become observed zero cells so observedness is preserved.
    Dimension is unchanged and the clip ranges are recorded on the result.
    Idempotent for fixed ``ell``.
    """
    n = adj.n
    if not (0 <= ell <= n / 2):
        raise GraphStoreError(f"ell must lie in [0, n/2], got {ell}")
    if ell == 0 and adj.clip_cols == 0 and adj.clip_rows == 0:
        return adj
    band = (adj.cols < ell) | (adj.rows >= n - ell)
    keep = ~band
    demoted = band & (adj.rows >= adj.cols)
    lower_rows = np.concatenate([adj.lower_rows, adj.rows[demoted]])
    lower_cols = np.concatenate([adj.lower_cols, adj.cols[demoted]])
    return PartialAdjacency(
        n, adj.rows[keep], adj.cols[keep], adj.vals[keep],
        lower_rows, lower_cols,
        node_order=adj.node_order, times=adj.times,
        clip_cols=max(adj.clip_cols, ell), clip_rows=max(adj.clip_rows, ell),
        ingest=adj.ingest)


def identifiability_rank(a_expected: np.ndarray, ell: int, tol: float = 1e-8) -> int:
    """Numerical rank of the top-right ell x (ell+1) block.

    The block spans rows 1..ell and columns n-ell..n (1-based); its rank
    reaching the matrix rank certifies that all cells outside the first ell
    columns and last ell rows are recoverable from upper-triangle data.
    Diagnostic for simulations and small corpora only: takes a dense matrix.
    """
    a = np.asarray(a_expected, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphStoreError("expected a square dense matrix")
    n = a.shape[0]
    if not (1 <= ell <= n / 2):
        raise GraphStoreError(f"ell must lie in [1, n/2], got {ell}")
    block = a[0:ell, n - ell - 1:n]
    s = np.linalg.svd(block, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def nystrom_reconstruct(a_expected: np.ndarray, ell: int):
    """Reconstruct the identified cells of an exactly low-rank matrix.

    Uses only entries on or above the block boundaries: with
    M = A[1:ell, (n-ell):n] full rank, every cell (i, j) with
    1 < i <= n-ell and ell < j <= n equals v M^- u where v is row i
    restricted to the last ell+1 columns and u is column j restricted to
    the first ell rows. Returns (recon, row_offset, col_offset) where
    recon[r, c] estimates A[row_offset + r, col_offset + c] (0-based).
    """
    a = np.asarray(a_expected, dtype=np.float64)
    n = a.shape[0]
    if not (1 <= ell <= n / 2):
        raise GraphStoreError(f"ell must lie in [1, n/2], got {ell}")
    m_block = a[0:ell, n - ell - 1:n]
    v_all = a[1:n - ell, n - ell - 1:n]
    u_all = a[0:ell, ell:n]
    recon = v_all @ np.linalg.pinv(m_block) @ u_all
    return recon, 1, ell


def read_edge_list(path, times_path=None) -> EdgeList:
    """Read delimited citation records, plus an optional timestamp table.

    Both files are UTF-8 text with a header row; comma or tab delimiters are
    auto-detected. Edges need columns citing,cited and may carry a weight
    column; the timestamp table needs id,time with integer times.
    """
    citing, cited, weights = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=_sniff_delimiter(path))
        header = _normalize_header(next(reader, None), path)
        try:
            ci, cj = header.index("citing"), header.index("cited")
        except ValueError:
            raise IngestError(f"{path}: header must name citing and cited columns")
        wi = header.index("weight") if "weight" in header else None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} fields")
            citing.append(row[ci].strip())
            cited.append(row[cj].strip())
            if wi is not None:
                try:
                    weights.append(float(row[wi]))
                except ValueError:
                    raise IngestError(f"{path}:{lineno}: bad weight {row[wi]!r}")
    times = None
    if times_path is not None:
        times = {}
        with open(times_path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter=_sniff_delimiter(times_path))
            header = _normalize_header(next(reader, None), times_path)
            try:
                ii, ti = header.index("id"), header.index("time")
            except ValueError:
                raise IngestError(f"{times_path}: header must name id and time columns")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                doc = row[ii].strip()
                if doc in times:
                    raise IngestError(f"{times_path}:{lineno}: duplicate id {doc!r}")
                try:
                    times[doc] = int(row[ti])
                except ValueError:
                    raise IngestError(f"{times_path}:{lineno}: bad time {row[ti]!r}")
    return EdgeList(citing, cited, weights if weights else None, times)


def _sniff_delimiter(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    return "\t" if "\t" in first else ","


def _normalize_header(row, path):
    if row is None:
        raise IngestError(f"{path}: empty file, header row required")
    return [c.strip().lower() for c in row]


def write_edge_list(adj: PartialAdjacency, path, sidecar_path=None):
    """Export the stored nonzeros as citing,cited,weight rows (LF endings).

    External ids come from node_order when present, else 1-based indices as
    strings. A JSON sidecar with {n, nnz, clipped_cols, clipped_rows, order}
    is written when a path is given.
    """
    order = adj.node_order
    if order is None:
        order = [str(i + 1) for i in range(adj.n)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["citing", "cited", "weight"])
        for i, j, v in zip(adj.rows, adj.cols, adj.vals):
            writer.writerow([order[i], order[j], _format_weight(v)])
    if sidecar_path is not None:
        with open(sidecar_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(adj.sidecar(), fh, indent=2)
            fh.write("\n")


def _format_weight(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))
