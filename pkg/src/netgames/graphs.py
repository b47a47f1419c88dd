"""Payoff graphs, random generators and local centrality weights.

Graphs are undirected and simple.  Adjacency is stored in compressed
sparse row form with sorted neighbor lists, so ``indices[indptr[i]:indptr[i+1]]``
is the sorted neighbor set of node ``i``.  Every directed copy of an edge
gets a position in that array, and per-edge quantities (local centrality,
interaction weights) are stored in the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameter, IsolatedNodeError

__all__ = [
    "PayoffGraph",
    "CentralityCache",
    "gen_erdos_renyi",
    "gen_barabasi_albert",
    "extract_nested_subgraphs",
    "neighborhood",
    "local_centrality",
    "lambda_weight",
    "ba_seed_size",
]


@dataclass(frozen=True, eq=False)
class PayoffGraph:
    """Undirected simple graph on nodes ``0..n-1``.

    Build instances with :meth:`from_edges`, which validates and
    symmetrizes; the raw constructor trusts its arguments.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges, *, strict: bool = True) -> "PayoffGraph":
        """Build a graph from an iterable or ``(k, 2)`` array of node pairs.

        With ``strict`` (the default) self-loops, out-of-range ids and
        duplicate pairs raise :class:`InvalidParameter`; otherwise
        duplicates are merged and self-loops dropped.
        """
        n = int(n)
        if n < 1:
            raise InvalidParameter("graph needs at least one node")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise InvalidParameter("node id out of range")
        loops = e[:, 0] == e[:, 1]
        if loops.any():
            if strict:
                raise InvalidParameter(f"self-loop at node {int(e[loops][0, 0])}")
            e = e[~loops]
        lo = np.minimum(e[:, 0], e[:, 1])
        hi = np.maximum(e[:, 0], e[:, 1])
        key = lo * n + hi
        ukey = np.unique(key)
        if strict and ukey.size != key.size:
            raise InvalidParameter("duplicate edge")
        lo, hi = ukey // n, ukey % n
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, indptr, cols.astype(np.int64))

    @classmethod
    def from_sparse(cls, adj) -> "PayoffGraph":
        coo = sp.triu(sp.coo_matrix(adj), k=1)
        return cls.from_edges(adj.shape[0], np.column_stack([coo.row, coo.col]), strict=False)

    # -- basic queries -------------------------------------------------
    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def num_edges(self) -> int:
        return int(self.indices.size // 2)

    @property
    def average_degree(self) -> float:
        return float(self.degrees.mean())

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def adjacency(self, i: int) -> frozenset:
        return frozenset(int(j) for j in self.neighbors(i))

    def has_edge(self, i: int, j: int) -> bool:
        nb = self.neighbors(i)
        k = np.searchsorted(nb, j)
        return bool(k < nb.size and nb[k] == j)

    def edge_list(self) -> np.ndarray:
        """Undirected edges as a ``(m, 2)`` array with ``src < dst``."""
        src = self.edge_src
        keep = src < self.indices
        return np.column_stack([src[keep], self.indices[keep]])

    # -- per directed edge arrays -------------------------------------
    @cached_property
    def edge_src(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)

    @cached_property
    def edge_rev(self) -> np.ndarray:
        """Position of the reversed copy of each directed edge."""
        key = self.edge_src * self.n + self.indices
        return np.searchsorted(key, self.indices * self.n + self.edge_src)

    @cached_property
    def adjacency_matrix(self) -> sp.csr_matrix:
        data = np.ones(self.indices.size)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    @cached_property
    def row_normalized(self) -> sp.csr_matrix:
        """Adjacency divided by degree; rows of isolated nodes are zero."""
        deg = self.degrees
        inv = np.divide(1.0, deg, out=np.zeros(self.n), where=deg > 0)
        data = inv[self.edge_src]
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    @cached_property
    def centrality(self) -> "CentralityCache":
        return CentralityCache.build(self)

    def subgraph(self, nodes) -> tuple["PayoffGraph", np.ndarray]:
        """Induced subgraph on ``nodes``; returns it with the original ids."""
        ids = np.unique(np.asarray(nodes, dtype=np.int64))
        sub = self.adjacency_matrix[ids][:, ids]
        return PayoffGraph.from_sparse(sub), ids

    def __repr__(self) -> str:
        return f"PayoffGraph(n={self.n}, edges={self.num_edges})"


@dataclass(frozen=True, eq=False)
class CentralityCache:
    """Local centrality of a graph, independent of the interaction parameter.

    ``c_edge[e]`` is c_ij for the directed edge at CSR position ``e`` and
    ``c_diag[i]`` is c_ii.  Isolated nodes carry zeros.
    """

    graph: PayoffGraph
    c_diag: np.ndarray
    c_edge: np.ndarray
    common: np.ndarray

    @classmethod
    def build(cls, g: PayoffGraph) -> "CentralityCache":
        deg = g.degrees.astype(float)
        A = g.adjacency_matrix
        # common-neighbor counts on every directed edge, read off A @ A
        P = (A @ A).tocsr()
        P.sort_indices()
        prow = np.repeat(np.arange(g.n, dtype=np.int64), np.diff(P.indptr))
        pkey = prow * g.n + P.indices
        ekey = g.edge_src * g.n + g.indices
        pos = np.searchsorted(pkey, ekey)
        pos = np.minimum(pos, max(pkey.size - 1, 0))
        hit = pkey.size > 0
        common = np.where(hit & (pkey[pos] == ekey), P.data[pos] if hit else 0.0, 0.0)
        c_edge = common / deg[g.edge_src] if g.indices.size else np.zeros(0)
        c_diag = g.row_normalized @ (1.0 / (deg + 1.0))
        return cls(g, c_diag, c_edge, common)

    def pair(self, i: int, j: int) -> float:
        return local_centrality(self.graph, i, j)


# ---------------------------------------------------------------------------
# generators


def gen_erdos_renyi(n: int, lam: float, rng: np.random.Generator) -> PayoffGraph:
    """Erdos-Renyi graph where each pair is linked with probability ``lam / n``.

    The edge count is drawn from its binomial law and the edge set is a
    uniform subset of that size, which is the same distribution as
    independent coin flips per pair.
    """
    if n < 2:
        raise InvalidParameter("n must be at least 2")
    if not 0 < lam < n:
        raise InvalidParameter(f"lambda must lie in (0, n), got {lam}")
    return _erdos_renyi_p(n, lam / n, rng)


def _erdos_renyi_p(n: int, p: float, rng: np.random.Generator) -> PayoffGraph:
    npairs = n * (n - 1) // 2
    m = int(rng.binomial(npairs, p))
    if m == 0:
        return PayoffGraph.from_edges(n, np.zeros((0, 2), dtype=np.int64))
    flat = np.sort(rng.choice(npairs, size=m, replace=False))
    # row i owns the pair indices [offset[i], offset[i+1])
    rows = np.arange(n, dtype=np.int64)
    offset = rows * (n - 1) - rows * (rows - 1) // 2
    i = np.searchsorted(offset, flat, side="right") - 1
    j = flat - offset[i] + i + 1
    return PayoffGraph.from_edges(n, np.column_stack([i, j]))


def ba_seed_size(n: int) -> int:
    """Smallest integer at or above 5 * sqrt(n)."""
    return int(math.ceil(5.0 * math.sqrt(n)))


def gen_barabasi_albert(
    n: int,
    m: int,
    seed_size: int | None = None,
    seed_p: float | None = None,
    rng: np.random.Generator | None = None,
) -> PayoffGraph:
    """Preferential attachment graph grown from an Erdos-Renyi seed.

    Each new node links to ``m`` distinct existing nodes drawn without
    replacement with probability proportional to degree, with the degrees
    frozen at the start of the step.  Nodes of degree zero are only reached
    when fewer than ``m`` nodes have positive degree; the shortfall is then
    filled uniformly among them.

    ``seed_size`` defaults to ``ceil(5 sqrt(n))`` and ``seed_p`` to
    ``1 / (seed_size - 1)``.
    """
    if rng is None:
        raise InvalidParameter("an explicit random generator is required")
    if seed_size is None:
        seed_size = ba_seed_size(n)
    if seed_p is None:
        seed_p = 1.0 / (seed_size - 1)
    if m < 1:
        raise InvalidParameter("m must be at least 1")
    if m >= seed_size:
        raise InvalidParameter("m must be smaller than the seed size")
    if seed_size >= n:
        raise InvalidParameter("seed size must be smaller than n")
    if not 0 < seed_p < 1:
        raise InvalidParameter("seed_p must lie in (0, 1)")

    seed = _erdos_renyi_p(seed_size, seed_p, rng)
    seed_edges = seed.edge_list()
    n_new = n - seed_size
    src = np.empty(n_new * m, dtype=np.int64)
    dst = np.empty(n_new * m, dtype=np.int64)
    # every edge contributes both endpoints, so uniform draws from this
    # list are degree-proportional draws
    ends = np.empty(2 * (seed_edges.shape[0] + n_new * m), dtype=np.int64)
    n_ends = 2 * seed_edges.shape[0]
    ends[:n_ends] = seed_edges.ravel()
    deg = np.zeros(n, dtype=np.int64)
    np.add.at(deg, seed_edges.ravel(), 1)
    n_pos = int(np.count_nonzero(deg[:seed_size]))

    buf = rng.random(4 * n_new * m + 64)
    k = 0
    pos = 0
    for t in range(seed_size, n):
        if n_pos >= m:
            chosen: list[int] = []
            while len(chosen) < m:
                if k == buf.size:
                    buf = rng.random(buf.size)
                    k = 0
                c = int(ends[int(buf[k] * n_ends)])
                k += 1
                if c not in chosen:
                    chosen.append(c)
        else:
            positive = np.flatnonzero(deg[:t])
            zero = np.flatnonzero(deg[:t] == 0)
            fill = rng.choice(zero, size=m - positive.size, replace=False)
            chosen = [int(x) for x in positive] + [int(x) for x in fill]
        for c in chosen:
            src[pos] = t
            dst[pos] = c
            pos += 1
            ends[n_ends] = t
            ends[n_ends + 1] = c
            n_ends += 2
            if deg[c] == 0:
                n_pos += 1
            deg[c] += 1
        deg[t] = m
        n_pos += 1
    edges = np.concatenate([seed_edges, np.column_stack([src, dst])])
    return PayoffGraph.from_edges(n, edges)


# ---------------------------------------------------------------------------
# neighborhoods


def _expand(g: PayoffGraph, nodes: np.ndarray) -> np.ndarray:
    if nodes.size == 0:
        return nodes
    starts, stops = g.indptr[nodes], g.indptr[nodes + 1]
    lens = stops - starts
    if lens.sum() == 0:
        return np.zeros(0, dtype=np.int64)
    idx = np.repeat(starts - np.cumsum(lens) + lens, lens) + np.arange(lens.sum())
    return np.unique(g.indices[idx])


def ball(g: PayoffGraph, root: int, radius: int) -> np.ndarray:
    """Sorted ids of all nodes within ``radius`` hops of ``root``."""
    seen = np.zeros(g.n, dtype=bool)
    seen[root] = True
    frontier = np.array([root], dtype=np.int64)
    for _ in range(radius):
        nxt = _expand(g, frontier)
        nxt = nxt[~seen[nxt]]
        if nxt.size == 0:
            break
        seen[nxt] = True
        frontier = nxt
    return np.flatnonzero(seen)


def neighborhood(g: PayoffGraph, i: int, order: int = 1) -> frozenset:
    """Nodes within ``order`` hops of ``i``, excluding ``i`` itself."""
    if not 0 <= i < g.n:
        raise InvalidParameter(f"node {i} out of range")
    if order < 1:
        raise InvalidParameter("order must be at least 1")
    return frozenset(int(j) for j in ball(g, i, order) if j != i)


def extract_nested_subgraphs(g: PayoffGraph, root: int, k: int):
    """Balls of radius k, k+1 and k+2 around ``root``.

    Returns a list of three ``(subgraph, ids)`` pairs for the induced
    subgraphs A, B and C, where ``ids`` maps subgraph nodes back to ``g``.
    """
    if not 0 <= root < g.n:
        raise InvalidParameter(f"root {root} out of range")
    if k < 1:
        raise InvalidParameter("k must be at least 1")
    return [g.subgraph(ball(g, root, r)) for r in (k, k + 1, k + 2)]


# ---------------------------------------------------------------------------
# centrality primitives


def local_centrality(g: PayoffGraph, i: int, j: int) -> float:
    """c_ij: share of i's neighbors that j is linked to; c_ii uses 1/(n_k + 1)."""
    nb = g.neighbors(i)
    if nb.size == 0:
        raise IsolatedNodeError(f"node {i} has no neighbors")
    if i == j:
        return float(np.mean(1.0 / (g.degrees[nb] + 1.0)))
    common = np.intersect1d(nb, g.neighbors(j), assume_unique=True).size
    return common / nb.size


def lambda_weight(c, beta: float):
    """Amplification weight 1 / (1 - beta * c); vectorized over ``c``."""
    return 1.0 / (1.0 - beta * np.asarray(c, dtype=float)) if np.ndim(c) else 1.0 / (1.0 - beta * c)
