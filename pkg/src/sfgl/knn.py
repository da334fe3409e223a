"""Exact directed KNN graphs and their degree centralities."""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .dataset import SparseFeatureMatrix
from .errors import ContractError, InputError, ParseError

METRICS = ("cosine", "euclidean", "manhattan")

# one score block is at most this many float64 entries (~64 MB)
_BLOCK_ENTRIES = 1 << 23

# scores are ranked after rounding to this many mantissa bits (~1e-12 relative),
# so values that differ only by summation-order rounding count as ties
SCORE_BITS = 40


@dataclass(frozen=True, eq=False)
class DirectedKnnGraph:
    """Binary directed KNN graph; ``out_adj[i]`` holds node i's sorted out-neighbors."""

    n_nodes: int
    k: int
    metric: str
    out_adj: np.ndarray  # (n_nodes, k) int64

    def __post_init__(self):
        adj = np.asarray(self.out_adj, dtype=np.int64)
        object.__setattr__(self, "out_adj", adj)
        if adj.shape != (self.n_nodes, self.k):
            raise ContractError(f"out_adj must have shape ({self.n_nodes}, {self.k})")
        if self.k != min(self.k, max(self.n_nodes - 1, 0)):
            raise ContractError("k cannot exceed n_nodes - 1")
        if adj.size:
            if adj.min() < 0 or adj.max() >= self.n_nodes:
                raise ContractError("neighbor index out of range")
            if np.any(adj == np.arange(self.n_nodes)[:, None]):
                raise ContractError("self-loops are not allowed")
            if self.k > 1 and np.any(np.diff(adj, axis=1) <= 0):
                raise ContractError("neighbor lists must be strictly ascending")

    def edges(self) -> np.ndarray:
        src = np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.k)
        return np.column_stack([src, self.out_adj.ravel()])

    def adjacency(self) -> sp.csr_matrix:
        """Directed 0/1 adjacency, row = source."""
        e = self.edges()
        data = np.ones(len(e))
        return sp.csr_matrix((data, (e[:, 0], e[:, 1])), shape=(self.n_nodes, self.n_nodes))

    def __eq__(self, other):
        if not isinstance(other, DirectedKnnGraph):
            return NotImplemented
        return (
            (self.n_nodes, self.k, self.metric) == (other.n_nodes, other.k, other.metric)
            and np.array_equal(self.out_adj, other.out_adj)
        )


@dataclass(frozen=True)
class DegreeReport:
    in_degree: np.ndarray
    out_degree: np.ndarray
    undirected_degree: np.ndarray
    nonreciprocal_in: np.ndarray
    n_undirected_edges: int
    k: int

    @property
    def n_nodes(self) -> int:
        return len(self.in_degree)

    def degree_identity_holds(self) -> bool:
        """Sum of non-reciprocal in-degrees equals 2|E| - k|V|, with |E| <= k|V|."""
        n, E = self.n_nodes, self.n_undirected_edges
        return (
            int(self.nonreciprocal_in.sum()) == 2 * E - self.k * n
            and E <= self.k * n
            and int(self.out_degree.sum()) == self.k * n
            and int(self.undirected_degree.sum()) == 2 * E
        )


def _as_vector(u) -> np.ndarray:
    if sp.issparse(u):
        return np.asarray(u.toarray(), dtype=np.float64).ravel()
    return np.asarray(u, dtype=np.float64).ravel()


def similarity(u, v, metric: str = "cosine") -> float:
    """Similarity score where larger always means closer.

    Cosine returns ``dot(u, v) / sqrt(|u|^2 |v|^2)`` (0 if either vector is
    zero); Euclidean and Manhattan return the negated distance.
    """
    u, v = _as_vector(u), _as_vector(v)
    if u.shape != v.shape:
        raise ContractError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    if metric == "cosine":
        denom = float(np.dot(u, u)) * float(np.dot(v, v))
        if denom == 0.0:
            return 0.0
        return float(np.dot(u, v)) / np.sqrt(denom)
    if metric == "euclidean":
        d = u - v
        return -float(np.sqrt(np.dot(d, d)))
    if metric == "manhattan":
        return -float(np.abs(u - v).sum())
    raise ContractError(f"unknown metric {metric!r}")


def snap_scores(S: np.ndarray) -> np.ndarray:
    """Round scores to ``SCORE_BITS`` mantissa bits; infinities and zeros pass through."""
    m, e = np.frexp(S)
    return np.ldexp(np.round(m * 2.0 ** SCORE_BITS), e - SCORE_BITS)


def _thread_count(n_threads: int | None) -> int:
    if n_threads is None:
        n_threads = int(os.environ.get("SFGL_THREADS", "0") or 0)
    if n_threads <= 0:
        n_threads = os.cpu_count() or 1
    return n_threads


def _top_k(S: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k largest entries per row, ties to lower index, sorted."""
    n = S.shape[1]
    kth = np.partition(S, n - k, axis=1)[:, n - k][:, None]
    above = S > kth
    need = k - above.sum(axis=1, keepdims=True)
    tied = S == kth
    chosen = above | (tied & (np.cumsum(tied, axis=1) <= need))
    return np.nonzero(chosen)[1].reshape(S.shape[0], k)


class _Scorer:
    """Row-block score matrices for one metric over a fixed feature matrix."""

    def __init__(self, F: SparseFeatureMatrix, metric: str):
        self.metric = metric
        if metric == "cosine":
            self.X = F.to_scipy()
            self.XT = self.X.T.tocsr()
            self.sq = np.asarray(self.X.multiply(self.X).sum(axis=1)).ravel()
        elif metric in ("euclidean", "manhattan"):
            self.D = F.to_dense()
        else:
            raise ContractError(f"unknown metric {metric!r}")

    def block(self, lo: int, hi: int) -> np.ndarray:
        if self.metric == "cosine":
            dot = (self.X[lo:hi] @ self.XT).toarray()
            denom = self.sq[lo:hi, None] * self.sq[None, :]
            out = np.zeros_like(dot)
            np.divide(dot, np.sqrt(denom), out=out, where=denom > 0)
            return out
        kind = "euclidean" if self.metric == "euclidean" else "cityblock"
        return -cdist(self.D[lo:hi], self.D, kind)


def build_knn_graph(
    F: SparseFeatureMatrix,
    k: int,
    metric: str = "cosine",
    n_threads: int | None = None,
) -> DirectedKnnGraph:
    """Exhaustive top-k neighbor selection for every node.

    Each node links to the k other nodes with the highest ``similarity``;
    equal scores go to the lower node index. Scores are compared after
    ``snap_scores`` so that rounding noise cannot decide a mathematical tie. ``k >= n`` is clamped to n - 1.
    Row blocks are scored in parallel (``SFGL_THREADS`` caps the pool).
    """
    if not isinstance(F, SparseFeatureMatrix):
        F = SparseFeatureMatrix.from_dense(F) if not sp.issparse(F) else SparseFeatureMatrix.from_scipy(F)
    n = F.n_rows
    if n < 2:
        raise InputError("need at least 2 nodes to build a KNN graph")
    if k < 1:
        raise InputError("k must be at least 1")
    if k > n - 1:
        warnings.warn(f"k={k} >= n_nodes={n}; clamping to {n - 1}", stacklevel=2)
        k = n - 1
    if metric not in METRICS:
        raise ContractError(f"unknown metric {metric!r}")

    scorer = _Scorer(F, metric)
    bs = max(1, min(n, _BLOCK_ENTRIES // n))
    starts = list(range(0, n, bs))
    out = np.empty((n, k), dtype=np.int64)

    def work(lo):
        hi = min(lo + bs, n)
        S = snap_scores(scorer.block(lo, hi))
        S[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        out[lo:hi] = _top_k(S, k)

    workers = min(_thread_count(n_threads), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for lo in starts:
            work(lo)
    return DirectedKnnGraph(n, k, metric, out)


def degree_report(G: DirectedKnnGraph) -> DegreeReport:
    n, k = G.n_nodes, G.k
    e = G.edges()
    code = e[:, 0] * n + e[:, 1]
    reciprocal = np.isin(e[:, 1] * n + e[:, 0], code)
    in_deg = np.bincount(e[:, 1], minlength=n)
    out_deg = np.bincount(e[:, 0], minlength=n)
    # in-edges whose reverse also exists, per target node
    recip_in = np.bincount(e[reciprocal, 1], minlength=n)
    n_recip = int(reciprocal.sum())
    return DegreeReport(
        in_degree=in_deg,
        out_degree=out_deg,
        undirected_degree=out_deg + in_deg - recip_in,
        nonreciprocal_in=in_deg - recip_in,
        n_undirected_edges=len(e) - n_recip // 2,
        k=k,
    )


def symmetrize(G) -> sp.csr_matrix:
    """Undirected 0/1 adjacency: {u, v} is an edge iff u->v or v->u.

    Accepts a ``DirectedKnnGraph`` or any square sparse/dense adjacency.
    """
    A = G.adjacency() if isinstance(G, DirectedKnnGraph) else sp.csr_matrix(G, dtype=np.float64)
    A = (A + A.T).tocsr()
    A.setdiag(0)
    A.eliminate_zeros()
    A.data[:] = 1.0
    A.sort_indices()
    return A


def save_graph(G: DirectedKnnGraph, path) -> Path:
    """Write ``src dst`` lines to ``path`` and the JSON sidecar next to it."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for s, d in G.edges().tolist():
            fh.write(f"{s} {d}\n")
    rep = degree_report(G)
    meta = {
        "n_nodes": G.n_nodes,
        "k": G.k,
        "metric": G.metric,
        "n_directed_edges": G.n_nodes * G.k,
        "n_undirected_edges": rep.n_undirected_edges,
    }
    sidecar = sidecar_path(path)
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def load_graph(path) -> DirectedKnnGraph:
    path = Path(path)
    sidecar = sidecar_path(path)
    if not path.exists() or not sidecar.exists():
        raise InputError(f"graph files missing: {path} / {sidecar}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    n, k = int(meta["n_nodes"]), int(meta["k"])
    e = np.loadtxt(path, dtype=np.int64, ndmin=2).reshape(-1, 2)
    if len(e) != n * k:
        raise ParseError(f"{path}: expected {n * k} edges, found {len(e)}")
    order = np.lexsort((e[:, 1], e[:, 0]))
    e = e[order]
    if not np.array_equal(e[:, 0], np.repeat(np.arange(n), k)):
        raise ParseError(f"{path}: every node needs exactly k={k} out-edges")
    return DirectedKnnGraph(n, k, meta["metric"], e[:, 1].reshape(n, k))


def save_degree_csv(rep: DegreeReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node,in,out,undirected,nonreciprocal_in\n")
        cols = zip(rep.in_degree.tolist(), rep.out_degree.tolist(),
                   rep.undirected_degree.tolist(), rep.nonreciprocal_in.tolist())
        for i, (a, b, c, d) in enumerate(cols):
            fh.write(f"{i},{a},{b},{c},{d}\n")
