"""Node features, labels, edge lists and labeled/unlabeled splits."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractError, InputError, ParseError

log = logging.getLogger(__name__)

UNKNOWN = -1


@dataclass(frozen=True, eq=False)
class SparseFeatureMatrix:
    """Row-compressed node-by-feature matrix.

    Construction validates the CSR invariants: monotone ``row_ptr`` starting
    at 0 and ending at nnz, strictly increasing in-bounds column indices per
    row, and finite values.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)

        if self.n_rows < 0 or self.n_cols < 0:
            raise ContractError("matrix dimensions must be non-negative")
        if row_ptr.shape != (self.n_rows + 1,):
            raise ContractError(f"row_ptr must have length n_rows+1={self.n_rows + 1}")
        if row_ptr[0] != 0 or row_ptr[-1] != len(col_idx) or len(values) != len(col_idx):
            raise ContractError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(row_ptr) < 0):
            raise ContractError("row_ptr must be non-decreasing")
        if len(col_idx):
            if col_idx.min() < 0 or col_idx.max() >= self.n_cols:
                raise ContractError("column index out of bounds")
            # strictly increasing within a row: every step inside a row is > 0
            step = np.diff(col_idx)
            row_start = np.zeros(len(col_idx), dtype=bool)
            row_start[row_ptr[:-1][np.diff(row_ptr) > 0]] = True
            if np.any(step[~row_start[1:]] <= 0):
                raise ContractError("column indices must be strictly increasing within each row")
        if not np.all(np.isfinite(values)):
            raise ContractError("feature values must be finite")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=(self.n_rows, self.n_cols)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    @classmethod
    def from_scipy(cls, m) -> "SparseFeatureMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a) -> "SparseFeatureMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise ContractError("dense features must be a 2-D array")
        return cls.from_scipy(sp.csr_matrix(a))

    def __eq__(self, other):
        if not isinstance(other, SparseFeatureMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class LabelTable:
    n_nodes: int
    n_classes: int
    labels: np.ndarray  # UNKNOWN (-1) for nodes without a label

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.shape != (self.n_nodes,):
            raise ContractError("labels must have one entry per node")
        known = labels[labels != UNKNOWN]
        if np.any(known < 0) or np.any(known >= self.n_classes):
            raise ContractError(f"known labels must lie in [0, {self.n_classes})")

    @property
    def known_idx(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNKNOWN)


@dataclass(frozen=True)
class Split:
    labeled_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    val_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        for name in ("labeled_idx", "test_idx", "val_idx"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        parts = [self.labeled_idx, self.val_idx, self.test_idx]
        allidx = np.concatenate(parts)
        if len(np.unique(allidx)) != len(allidx):
            raise ContractError("labeled, validation and test indices must be disjoint")

    @property
    def m(self) -> int:
        return len(self.labeled_idx)

    def unlabeled_idx(self, n_nodes: int) -> np.ndarray:
        mask = np.ones(n_nodes, dtype=bool)
        mask[self.labeled_idx] = False
        return np.flatnonzero(mask)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "labeled_idx": self.labeled_idx.tolist(),
            "val_idx": self.val_idx.tolist(),
            "test_idx": self.test_idx.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(
            labeled_idx=np.array(d["labeled_idx"], dtype=np.int64),
            test_idx=np.array(d["test_idx"], dtype=np.int64),
            val_idx=np.array(d.get("val_idx", []), dtype=np.int64),
            seed=int(d["seed"]),
        )


def _tokens(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if parts:
                yield lineno, parts


def _int(tok: str, path, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: expected integer, got {tok!r}") from None


def _float(tok: str, path, lineno: int) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: expected number, got {tok!r}") from None
    if not math.isfinite(x):
        raise ParseError(f"{path}:{lineno}: non-finite value {tok!r}")
    return x


def load_features(path, format: str = "coo-text") -> SparseFeatureMatrix:
    """Read a feature matrix from ``coo-text`` or ``dense-text``.

    coo-text: header ``n_rows n_cols nnz`` followed by ``row col value`` lines.
    dense-text: header ``n_rows n_cols`` followed by one row of floats per line.
    Duplicate (row, col) entries are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"feature file not found: {path}")
    lines = _tokens(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError(f"{path}: empty file") from None

    if format == "coo-text":
        if len(header) != 3:
            raise ParseError(f"{path}:{lineno}: header must be 'n_rows n_cols nnz'")
        n_rows, n_cols, nnz = (_int(t, path, lineno) for t in header)
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        count = 0
        for lineno, parts in lines:
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 'row col value'")
            if count >= nnz:
                raise ParseError(f"{path}:{lineno}: more entries than declared nnz={nnz}")
            r, c = _int(parts[0], path, lineno), _int(parts[1], path, lineno)
            if not (0 <= r < n_rows and 0 <= c < n_cols):
                raise InputError(f"{path}:{lineno}: entry ({r}, {c}) outside {n_rows}x{n_cols}")
            rows[count], cols[count] = r, c
            vals[count] = _float(parts[2], path, lineno)
            count += 1
        if count != nnz:
            raise ParseError(f"{path}: declared nnz={nnz} but found {count} entries")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if np.any(dup):
            i = int(np.flatnonzero(dup)[0])
            raise ParseError(f"{path}: duplicate entry ({rows[i]}, {cols[i]})")
        row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=row_ptr[1:])
        return SparseFeatureMatrix(n_rows, n_cols, row_ptr, cols, vals)

    if format == "dense-text":
        if len(header) != 2:
            raise ParseError(f"{path}:{lineno}: header must be 'n_rows n_cols'")
        n_rows, n_cols = (_int(t, path, lineno) for t in header)
        data = np.empty((n_rows, n_cols), dtype=np.float64)
        r = 0
        for lineno, parts in lines:
            if r >= n_rows:
                raise ParseError(f"{path}:{lineno}: more rows than declared n_rows={n_rows}")
            if len(parts) != n_cols:
                raise ParseError(f"{path}:{lineno}: expected {n_cols} values, got {len(parts)}")
            data[r] = [_float(t, path, lineno) for t in parts]
            r += 1
        if r != n_rows:
            raise ParseError(f"{path}: declared n_rows={n_rows} but found {r}")
        return SparseFeatureMatrix.from_dense(data)

    raise ConfigError(f"unknown feature format {format!r}")


def save_features(F: SparseFeatureMatrix, path, format: str = "coo-text") -> None:
    # repr() round-trips float64 exactly
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        if format == "coo-text":
            fh.write(f"{F.n_rows} {F.n_cols} {F.nnz}\n")
            for r in range(F.n_rows):
                cols, vals = F.row(r)
                for c, v in zip(cols.tolist(), vals.tolist()):
                    fh.write(f"{r} {c} {v!r}\n")
        elif format == "dense-text":
            fh.write(f"{F.n_rows} {F.n_cols}\n")
            for row in F.to_dense().tolist():
                fh.write(" ".join(repr(v) for v in row) + "\n")
        else:
            raise ConfigError(f"unknown feature format {format!r}")


def tfidf_transform(F: SparseFeatureMatrix) -> SparseFeatureMatrix:
    """Weight raw counts by the smoothed inverse document frequency.

    ``w(r, c) = count(r, c) * (ln((1 + N) / (1 + df_c)) + 1)``
    """
    if np.any(F.values < 0):
        raise ContractError("tf-idf expects non-negative counts")
    df = np.bincount(F.col_idx[F.values > 0], minlength=F.n_cols)
    idf = np.log((1.0 + F.n_rows) / (1.0 + df)) + 1.0
    return SparseFeatureMatrix(
        F.n_rows, F.n_cols, F.row_ptr.copy(), F.col_idx.copy(), F.values * idf[F.col_idx]
    )


def load_labels(path, n_nodes: int, n_classes: int | None = None) -> LabelTable:
    """Read ``node_id class_id`` lines; nodes that never appear are unknown."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"label file not found: {path}")
    labels = np.full(n_nodes, UNKNOWN, dtype=np.int64)
    seen = np.zeros(n_nodes, dtype=bool)
    for lineno, parts in _tokens(path):
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'node_id class_id'")
        node, cls = _int(parts[0], path, lineno), _int(parts[1], path, lineno)
        if not 0 <= node < n_nodes:
            raise InputError(f"{path}:{lineno}: node id {node} outside [0, {n_nodes})")
        if seen[node]:
            raise ParseError(f"{path}:{lineno}: duplicate label for node {node}")
        if cls < UNKNOWN:
            raise ParseError(f"{path}:{lineno}: invalid class id {cls}")
        seen[node] = True
        labels[node] = cls
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if np.any(labels != UNKNOWN) else 0
    return LabelTable(n_nodes, n_classes, labels)


def save_labels(labels: LabelTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for node in labels.known_idx.tolist():
            fh.write(f"{node} {labels.labels[node]}\n")


def load_edge_list(path, n_nodes: int) -> np.ndarray:
    """Directed ``src dst`` edge list as an (E, 2) int array."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"edge list not found: {path}")
    edges = []
    for lineno, parts in _tokens(path):
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'src dst'")
        s, d = _int(parts[0], path, lineno), _int(parts[1], path, lineno)
        if not (0 <= s < n_nodes and 0 <= d < n_nodes):
            raise InputError(f"{path}:{lineno}: edge ({s}, {d}) references a node outside [0, {n_nodes})")
        edges.append((s, d))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def make_split(
    labels: LabelTable,
    m: int,
    strategy: str | None = None,
    seed: int = 0,
    n_val: int = 0,
) -> Split:
    """Sample ``m`` labeled nodes; remaining known-label nodes become the test set.

    ``strategy`` is ``"uniform"`` or ``"per-class-balanced"``; ``None`` picks
    balanced when ``m`` is a multiple of the class count. With ``n_val > 0`` a
    uniformly drawn validation set is carved out of the remainder.
    """
    known = labels.known_idx
    C = labels.n_classes
    if strategy is None:
        strategy = "per-class-balanced" if C and m % C == 0 else "uniform"
    if m < 1:
        raise ConfigError("label budget must be at least 1")
    if m + n_val > len(known):
        raise ConfigError(f"label budget {m} (+{n_val} val) exceeds {len(known)} known labels")

    rng = np.random.default_rng(seed)
    if strategy == "uniform":
        labeled = rng.choice(known, size=m, replace=False)
    elif strategy == "per-class-balanced":
        if m % C:
            raise ConfigError(f"per-class-balanced split needs m divisible by {C} classes")
        per = m // C
        chosen = []
        for c in range(C):
            members = known[labels.labels[known] == c]
            if len(members) < per:
                raise ConfigError(f"class {c} has {len(members)} labeled nodes, need {per}")
            chosen.append(rng.choice(members, size=per, replace=False))
        labeled = np.concatenate(chosen)
    else:
        raise ConfigError(f"unknown split strategy {strategy!r}")
    labeled = np.sort(labeled)

    rest = np.setdiff1d(known, labeled)
    val = np.zeros(0, dtype=np.int64)
    if n_val:
        val = np.sort(rng.choice(rest, size=n_val, replace=False))
        rest = np.setdiff1d(rest, val)
    if len(rest) == 0:
        warnings.warn("label budget consumes every known label; test set is empty", stacklevel=2)
    return Split(labeled_idx=labeled, test_idx=rest, val_idx=val, seed=seed)


def load_linqs(content_path, cites_path=None):
    """Parse the LINQS ``.content``/``.cites`` citation-network layout.

    Returns ``(F, labels, edges, class_names)``. Nodes are numbered by their
    order in the content file, classes by sorted class name. Edges are
    ``citing -> cited``; citations to unknown papers are dropped.
    """
    ids, rows, names = [], [], []
    with open(content_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append(np.array(parts[1:-1], dtype=np.float64))
            names.append(parts[-1])
    class_names = sorted(set(names))
    index = {pid: i for i, pid in enumerate(ids)}
    F = SparseFeatureMatrix.from_dense(np.vstack(rows))
    y = np.array([class_names.index(n) for n in names], dtype=np.int64)
    labels = LabelTable(len(ids), len(class_names), y)
    edges = np.zeros((0, 2), dtype=np.int64)
    if cites_path is not None:
        pairs = []
        with open(cites_path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if len(parts) == 2 and parts[0] in index and parts[1] in index:
                    pairs.append((index[parts[1]], index[parts[0]]))
        edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return F, labels, edges, class_names
