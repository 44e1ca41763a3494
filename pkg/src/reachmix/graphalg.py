"""CSR graph algorithms: self-loops, symmetric normalization, BFS, diameter,
and the pairwise adjacency-mixing operator.

All graphs are symmetric weighted CSR. Functions are pure: they never mutate
their inputs and always return new graphs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

EXACT_DIAMETER_LIMIT = 20_000  # above this, fall back to a double-sweep lower bound


@dataclass(frozen=True)
class CsrGraph:
    """Symmetric sparse adjacency in CSR form.

    Invariants: column indices sorted within each row, weights strictly
    positive, and entry (i, j) present iff (j, i) is present with the same
    weight.
    """

    indptr: np.ndarray  # int64, length num_nodes + 1
    indices: np.ndarray  # int64, length nnz
    weights: np.ndarray  # float64, length nnz
    num_nodes: int

    def __post_init__(self):
        object.__setattr__(self, "indptr", np.asarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        for arr in (self.indptr, self.indices, self.weights):
            arr.setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def row(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.indptr[u], self.indptr[u + 1]
        return self.indices[s:e], self.weights[s:e]

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry (COO expansion of indptr)."""
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(self.indptr))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.num_nodes, self.num_nodes))
        dense[self.row_ids(), self.indices] = self.weights
        return dense

    def validate(self) -> None:
        """Full invariant check; O(nnz). Used by constructors and tests."""
        n = self.num_nodes
        if n < 1:
            raise ValueError("graph must have at least one node")
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0 or self.indptr[-1] != self.indices.size:
            raise ValueError("malformed indptr")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= n:
                raise ValueError("column index out of range")
        if self.weights.shape != self.indices.shape:
            raise ValueError("weights and indices length mismatch")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and > 0")
        rows = self.row_ids()
        order = np.lexsort((self.indices, rows))
        if not np.array_equal(order, np.arange(self.indices.size)):
            raise ValueError("columns must be sorted within each row")
        both = np.stack([rows, self.indices], axis=1)
        if np.unique(both, axis=0).shape[0] != both.shape[0]:
            raise ValueError("duplicate entry in a row")
        t = transpose(self)
        if not (
            np.array_equal(t.indptr, self.indptr)
            and np.array_equal(t.indices, self.indices)
            and np.array_equal(t.weights, self.weights)
        ):
            raise ValueError("graph is not symmetric")


def from_coo(num_nodes: int, rows, cols, weights) -> CsrGraph:
    """Assemble CSR from COO triplets; duplicate (row, col) entries are summed.

    Duplicates are accumulated in input order, so the result is deterministic
    for a fixed input ordering.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    order = np.lexsort((cols, rows))  # stable: preserves input order within duplicates
    rows, cols, weights = rows[order], cols[order], weights[order]
    if rows.size:
        boundary = np.empty(rows.size, dtype=bool)
        boundary[0] = True
        boundary[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.nonzero(boundary)[0]
        weights = np.add.reduceat(weights, starts)
        rows, cols = rows[starts], cols[starts]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    return CsrGraph(indptr, cols, weights, num_nodes)


def from_edges(num_nodes: int, edges: np.ndarray) -> CsrGraph:
    """Unweighted symmetric CSR from a canonical (E, 2) undirected edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    g = from_coo(num_nodes, rows, cols, np.ones(rows.size))
    g.validate()
    return g


def transpose(g: CsrGraph) -> CsrGraph:
    rows = g.row_ids()
    order = np.argsort(g.indices, kind="stable")  # stable keeps rows sorted within a column
    new_rows = g.indices[order]
    indptr = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, new_rows + 1, 1)
    return CsrGraph(np.cumsum(indptr), rows[order], g.weights[order], g.num_nodes)


def _row_sums(g: CsrGraph) -> np.ndarray:
    sums = np.zeros(g.num_nodes)
    if g.nnz:
        counts = np.diff(g.indptr)
        nonempty = counts > 0
        starts = g.indptr[:-1][nonempty]
        sums[nonempty] = np.add.reduceat(g.weights, starts)
    return sums


def matmul_dense(g: CsrGraph, x: np.ndarray) -> np.ndarray:
    """Sparse-dense product g @ x with row-major accumulation (deterministic)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros((g.num_nodes, x.shape[1]))
    if g.nnz:
        contrib = g.weights[:, None] * x[g.indices]
        counts = np.diff(g.indptr)
        nonempty = counts > 0
        starts = g.indptr[:-1][nonempty]
        out[nonempty] = np.add.reduceat(contrib, starts, axis=0)
    return out


def identity_adjacency(n: int) -> CsrGraph:
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = np.arange(n, dtype=np.int64)
    return CsrGraph(np.arange(n + 1, dtype=np.int64), idx, np.ones(n), n)


def add_self_loops(g: CsrGraph) -> CsrGraph:
    """Ensure every node has a self-edge; missing diagonals get weight 1.

    Existing diagonal entries are kept as they are, so the operation is
    idempotent.
    """
    rows = g.row_ids()
    has_loop = np.zeros(g.num_nodes, dtype=bool)
    diag = rows == g.indices
    has_loop[rows[diag]] = True
    missing = np.nonzero(~has_loop)[0]
    if missing.size == 0:
        return g
    new_rows = np.concatenate([rows, missing])
    new_cols = np.concatenate([g.indices, missing])
    new_w = np.concatenate([g.weights, np.ones(missing.size)])
    return from_coo(g.num_nodes, new_rows, new_cols, new_w)


def sym_normalize(g: CsrGraph) -> CsrGraph:
    """Return D^{-1/2} A D^{-1/2} with weighted degrees.

    The per-entry scale is computed as s_i * s_j before multiplying the
    weight, which keeps the result exactly symmetric entry-for-entry.
    """
    deg = _row_sums(g)
    if np.any(deg <= 0):
        bad = int(np.nonzero(deg <= 0)[0][0])
        raise ValueError(f"node {bad} has non-positive weighted degree; add self-loops first")
    s = 1.0 / np.sqrt(deg)
    scale = s[g.row_ids()] * s[g.indices]
    return CsrGraph(g.indptr, g.indices, g.weights * scale, g.num_nodes)


def structural_degrees(g: CsrGraph) -> np.ndarray:
    """Per-node neighbor count, self-loops excluded."""
    rows = g.row_ids()
    deg = np.zeros(g.num_nodes, dtype=np.int64)
    off_diag = rows != g.indices
    np.add.at(deg, rows[off_diag], 1)
    return deg


def bfs_distances(g: CsrGraph, sources) -> np.ndarray:
    """Unweighted multi-source BFS: hop distance to the nearest source.

    Returns float64 with ``np.inf`` for unreachable nodes. Self-loops never
    shorten a path, so they are effectively ignored.
    """
    sources = np.asarray(sorted(set(int(s) for s in np.atleast_1d(sources))), dtype=np.int64)
    if sources.size == 0:
        raise ValueError("sources must be non-empty")
    if sources.min() < 0 or sources.max() >= g.num_nodes:
        raise ValueError("source id out of range")
    dist = np.full(g.num_nodes, np.inf)
    dist[sources] = 0.0
    frontier = sources
    level = 0
    while frontier.size:
        level += 1
        counts = np.diff(g.indptr)[frontier]
        total = int(counts.sum())
        if total == 0:
            break
        # Flatten the CSR slices of the whole frontier in one shot.
        offsets = np.repeat(g.indptr[frontier], counts)
        within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        neighbors = g.indices[offsets + within]
        fresh = neighbors[np.isinf(dist[neighbors])]
        if fresh.size == 0:
            break
        frontier = np.unique(fresh)
        dist[frontier] = level
    return dist


def connected_components(g: CsrGraph) -> np.ndarray:
    """Component id per node; ids are assigned in order of smallest member."""
    comp = np.full(g.num_nodes, -1, dtype=np.int64)
    next_id = 0
    for start in range(g.num_nodes):
        if comp[start] >= 0:
            continue
        reach = np.isfinite(bfs_distances(g, [start]))
        comp[reach] = next_id
        next_id += 1
    return comp


def _double_sweep_lower_bound(g: CsrGraph, comp: np.ndarray) -> int:
    best = 0
    for c in range(comp.max() + 1):
        members = np.nonzero(comp == c)[0]
        d0 = bfs_distances(g, [members[0]])
        d0[~np.isfinite(d0)] = -1
        far = int(np.argmax(d0))
        d1 = bfs_distances(g, [far])
        d1 = d1[np.isfinite(d1)]
        best = max(best, int(d1.max()))
    return best


def diameter_and_components(g: CsrGraph) -> tuple[int, np.ndarray]:
    """Exact diameter (max eccentricity over components) and component ids.

    Exact all-sources BFS up to ``EXACT_DIAMETER_LIMIT`` nodes; beyond that a
    double-sweep lower bound is returned with a warning.
    """
    comp = connected_components(g)
    if g.num_nodes > EXACT_DIAMETER_LIMIT:
        warnings.warn(
            f"graph has {g.num_nodes} nodes; diameter is a double-sweep lower bound",
            RuntimeWarning,
        )
        return _double_sweep_lower_bound(g, comp), comp
    diameter = 0
    for u in range(g.num_nodes):
        d = bfs_distances(g, [u])
        finite = d[np.isfinite(d)]
        diameter = max(diameter, int(finite.max()))
    return diameter, comp


@dataclass(frozen=True)
class MixSelector:
    """A batch of simultaneous pair mixes: row/column i of the adjacency is
    replaced by the convex combination lam * row_i + (1 - lam) * row_partner.
    """

    targets: np.ndarray  # int64
    partners: np.ndarray  # int64
    lams: np.ndarray  # float64 in [0, 1]

    def __post_init__(self):
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=np.int64))
        object.__setattr__(self, "partners", np.asarray(self.partners, dtype=np.int64))
        object.__setattr__(self, "lams", np.asarray(self.lams, dtype=np.float64))
        k = self.targets.size
        if self.partners.size != k or self.lams.size != k:
            raise ValueError("targets, partners, lams must have equal length")
        if np.unique(self.targets).size != k:
            raise ValueError("targets must be distinct")
        if np.intersect1d(self.targets, self.partners).size:
            raise ValueError("a partner may not also be a target")
        if k and (self.lams.min() < 0.0 or self.lams.max() > 1.0):
            raise ValueError("lambda values must lie in [0, 1]")

    def __len__(self) -> int:
        return int(self.targets.size)


def _mix_rows(g: CsrGraph, sel: MixSelector) -> CsrGraph:
    """Row transform S @ g where S is identity with target rows replaced by
    lam * e_t + (1 - lam) * e_p."""
    order = np.argsort(sel.targets)
    targets = sel.targets[order]
    partners = sel.partners[order]
    lams = sel.lams[order]

    pieces_cols, pieces_w, counts = [], [], np.diff(g.indptr).copy()
    prev = 0
    for t, p, lam in zip(targets, partners, lams):
        t = int(t)
        if prev < t:  # untouched run [prev, t)
            pieces_cols.append(g.indices[g.indptr[prev]:g.indptr[t]])
            pieces_w.append(g.weights[g.indptr[prev]:g.indptr[t]])
        ct, wt = g.row(t)
        cp, wp = g.row(int(p))
        cols = np.concatenate([ct, cp])
        w = np.concatenate([lam * wt, (1.0 - lam) * wp])
        uniq, inv = np.unique(cols, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, w)
        pieces_cols.append(uniq)
        pieces_w.append(merged)
        counts[t] = uniq.size
        prev = t + 1
    if prev < g.num_nodes:
        pieces_cols.append(g.indices[g.indptr[prev]:])
        pieces_w.append(g.weights[g.indptr[prev]:])

    indices = np.concatenate(pieces_cols) if pieces_cols else np.zeros(0, dtype=np.int64)
    weights = np.concatenate(pieces_w) if pieces_w else np.zeros(0)
    indptr = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return CsrGraph(indptr, indices.astype(np.int64), weights, g.num_nodes)


def _symmetrize_average(m: CsrGraph) -> CsrGraph:
    """(M + M^T) / 2 with an exactly symmetric result; drops exact zeros."""
    t = transpose(m)
    rows = np.concatenate([m.row_ids(), t.row_ids()])
    cols = np.concatenate([m.indices, t.indices])
    w = np.concatenate([0.5 * m.weights, 0.5 * t.weights])
    order = np.lexsort((cols, rows))  # stable: M entry precedes its mirrored twin
    rows, cols, w = rows[order], cols[order], w[order]
    boundary = np.empty(rows.size, dtype=bool)
    if rows.size:
        boundary[0] = True
        boundary[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.nonzero(boundary)[0]
        w = np.add.reduceat(w, starts)
        rows, cols = rows[starts], cols[starts]
    keep = w != 0.0
    rows, cols, w = rows[keep], cols[keep], w[keep]
    indptr = np.zeros(m.num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return CsrGraph(np.cumsum(indptr), cols, w, m.num_nodes)


def mix_adjacency(a: CsrGraph, sel: MixSelector) -> CsrGraph:
    """Apply the batched pair mix: returns S A S^T for the selector's S.

    S is the identity with row i replaced by lam * e_i + (1 - lam) * e_p(i)
    for every (i, p(i), lam) pair. All pairs are applied in one shot from the
    original A, which is order-independent and, for a single pair, coincides
    with mixing row i then column i. ``a`` must be symmetric (with whatever
    self-loops the caller wants mixed); the result is exactly symmetric.
    """
    if len(sel) == 0:
        return a
    hi = max(int(sel.targets.max()), int(sel.partners.max()))
    if hi >= a.num_nodes or min(int(sel.targets.min()), int(sel.partners.min())) < 0:
        raise ValueError("selector refers to node ids outside the graph")
    b = _mix_rows(a, sel)  # S A
    c = _mix_rows(transpose(b), sel)  # S (S A)^T = S A^T S^T ... transposed below
    return _symmetrize_average(transpose(c))
