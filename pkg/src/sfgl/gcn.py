"""Two-layer graph convolutional network written directly in numpy.

Forward: ``Z = softmax(A_hat @ relu(A_hat @ X @ W1 + b1) @ W2 + b2)`` with
``A_hat = D^-1/2 (A + I) D^-1/2``. Gradients are derived by hand and
checked against central finite differences; training is full-batch Adam.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dataset import UNKNOWN, LabelTable, SparseFeatureMatrix, Split
from .errors import ContractError, NumericError, ParseError, TrainingError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class GcnHyper:
    hidden: int = 128
    learning_rate: float = 0.001
    dropout: float = 0.5
    weight_decay: float = 0.0005
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.epochs < 0:
            raise ContractError("hidden must be >= 1 and epochs >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ContractError("learning_rate must be > 0 and weight_decay >= 0")


@dataclass(frozen=True, eq=False)
class GcnParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    hyper: GcnHyper = field(default_factory=GcnHyper)

    NAMES = ("W1", "b1", "W2", "b2")

    def __post_init__(self):
        d_in, h = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[0] != h or self.b2.shape != (self.W2.shape[1],):
            raise ContractError("inconsistent GCN parameter shapes")
        for name in self.NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"parameter {name} is not finite")

    @property
    def n_classes(self) -> int:
        return self.W2.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.NAMES}

    def with_arrays(self, arrays: dict) -> "GcnParams":
        return replace(self, **{n: np.array(a, dtype=np.float64) for n, a in arrays.items()})

    def __eq__(self, other):
        if not isinstance(other, GcnParams):
            return NotImplemented
        return self.hyper == other.hyper and all(
            np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values())
        )


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    n_nodes: int
    matrix: sp.csr_matrix

    def __matmul__(self, other):
        return self.matrix @ other

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class PseudoLabels:
    nodes: np.ndarray
    labels: np.ndarray
    confidence: np.ndarray


@dataclass
class TrainResult:
    params: GcnParams
    loss_history: list[float]
    train_accuracy: list[float]
    val_accuracy: list[float]
    best_epoch: int


def normalize_adjacency(A) -> NormalizedAdjacency:
    """Symmetric renormalization ``D~^-1/2 (A + I) D~^-1/2`` of an undirected graph."""
    A = sp.csr_matrix(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ContractError("adjacency must be square")
    if (A != A.T).nnz:
        raise ContractError("adjacency must be symmetric")
    if A.diagonal().any():
        raise ContractError("adjacency must not contain self-loops")
    At = (A + sp.identity(n, format="csr")).tocsr()
    d = np.asarray(At.sum(axis=1)).ravel()
    inv = sp.diags(1.0 / np.sqrt(d))
    M = (inv @ At @ inv).tocsr()
    M.sort_indices()
    return NormalizedAdjacency(n, M)


def _operand(X):
    if isinstance(X, SparseFeatureMatrix):
        return X.to_scipy()
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=np.float64)
    return np.asarray(X, dtype=np.float64)


def _adj(A_hat):
    return A_hat.matrix if isinstance(A_hat, NormalizedAdjacency) else A_hat


def init_params(d_in: int, n_classes: int, hyper: GcnHyper, rng=None) -> GcnParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(hyper.seed if rng is None else rng)

    def glorot(a, b):
        lim = np.sqrt(6.0 / (a + b))
        return rng.uniform(-lim, lim, size=(a, b))

    return GcnParams(
        glorot(d_in, hyper.hidden), np.zeros(hyper.hidden),
        glorot(hyper.hidden, n_classes), np.zeros(n_classes), hyper,
    )


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check(arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {layer}")


def _forward(params: GcnParams, A_hat, X, dropout_rng=None):
    A = _adj(A_hat)
    X = _operand(X)
    if X.shape[1] != params.W1.shape[0]:
        raise ContractError(f"feature dim {X.shape[1]} != W1 rows {params.W1.shape[0]}")
    pre1 = A @ (X @ params.W1) + params.b1
    _check(pre1, "layer 1 pre-activation")
    H = np.maximum(pre1, 0.0)
    mask = None
    p = params.hyper.dropout
    if dropout_rng is not None and p > 0:
        mask = (dropout_rng.random(H.shape) >= p) / (1.0 - p)
        H = H * mask
    logits = A @ (H @ params.W2) + params.b2
    _check(logits, "layer 2 logits")
    return {"X": X, "A": A, "pre1": pre1, "H": H, "mask": mask, "logits": logits}


def gcn_forward(params: GcnParams, A_hat, X, dropout_rng=None) -> np.ndarray:
    """Class probabilities for every node; dropout only when an rng is given."""
    Z = _softmax(_forward(params, A_hat, X, dropout_rng)["logits"])
    _check(Z, "softmax output")
    return Z


def _labeled(split: Split, labels: LabelTable):
    idx = split.labeled_idx
    y = labels.labels[idx]
    if np.any(y == UNKNOWN):
        raise ContractError("a labeled node has an unknown label")
    return idx, y


def gcn_loss(Z: np.ndarray, split: Split, labels: LabelTable, params: GcnParams) -> float:
    """Mean negative log-likelihood over labeled nodes plus L2 on the weight matrices."""
    idx, y = _labeled(split, labels)
    ce = -np.mean(np.log(Z[idx, y], dtype=np.float64))
    reg = 0.5 * params.hyper.weight_decay * (np.sum(params.W1**2) + np.sum(params.W2**2))
    return float(ce + reg)


def loss_and_grads(params: GcnParams, A_hat, X, split: Split, labels: LabelTable, dropout_rng=None):
    """Loss and analytic gradients w.r.t. (W1, b1, W2, b2)."""
    idx, y = _labeled(split, labels)
    c = _forward(params, A_hat, X, dropout_rng)
    A, logits = c["A"], c["logits"]
    m = len(idx)
    lg = logits[idx]
    lse = np.log(np.exp(lg - lg.max(axis=1, keepdims=True)).sum(axis=1)) + lg.max(axis=1)
    wd = params.hyper.weight_decay
    loss = float(np.mean(lse - lg[np.arange(m), y])
                 + 0.5 * wd * (np.sum(params.W1**2) + np.sum(params.W2**2)))

    d_logits = np.zeros_like(logits)
    G = _softmax(lg)
    G[np.arange(m), y] -= 1.0
    d_logits[idx] = G / m

    d_HW2 = A.T @ d_logits
    gW2 = c["H"].T @ d_HW2 + wd * params.W2
    gb2 = d_logits.sum(axis=0)
    dH = d_HW2 @ params.W2.T
    if c["mask"] is not None:
        dH = dH * c["mask"]
    d_pre1 = dH * (c["pre1"] > 0)
    gb1 = d_pre1.sum(axis=0)
    gW1 = np.asarray(c["X"].T @ (A.T @ d_pre1)) + wd * params.W1
    return loss, {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def gradient_check(X, A_hat, labels: LabelTable, split: Split, params: GcnParams | None = None,
                   step: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Runs in float64 with dropout off; intended for instances of <= 16 nodes.
    """
    X = _operand(X)
    if params is None:
        params = init_params(X.shape[1], labels.n_classes, GcnHyper(hidden=8, seed=0))
    _, grads = loss_and_grads(params, A_hat, X, split, labels)
    worst = 0.0
    base = {k: v.copy() for k, v in params.arrays().items()}
    for name, arr in base.items():
        for pos in np.ndindex(arr.shape):
            vals = []
            for sign in (1.0, -1.0):
                trial = {k: v.copy() for k, v in base.items()}
                trial[name][pos] += sign * step
                p = params.with_arrays(trial)
                vals.append(gcn_loss(gcn_forward(p, A_hat, X), split, labels, p))
            fd = (vals[0] - vals[1]) / (2.0 * step)
            ga = float(grads[name][pos])
            rel = abs(ga - fd) / max(abs(ga), abs(fd), 1e-8)
            worst = max(worst, rel)
    return worst


def _accuracy(Z, labels: LabelTable, idx) -> float:
    return float(np.mean(np.argmax(Z[idx], axis=1) == labels.labels[idx]))


def train_gcn(X, adjacency, labels: LabelTable, split: Split, hyper: GcnHyper | None = None) -> TrainResult:
    """Full-batch Adam training.

    ``adjacency`` is either a ``NormalizedAdjacency`` or an undirected 0/1
    matrix that gets normalized here. With a validation set the parameters
    of the best-validation epoch are returned, otherwise the final ones.
    """
    hyper = hyper or GcnHyper()
    A_hat = adjacency if isinstance(adjacency, NormalizedAdjacency) else normalize_adjacency(adjacency)
    X = _operand(X)
    if split.m < 1:
        raise ContractError("need at least one labeled node")
    if X.shape[0] != A_hat.n_nodes or labels.n_nodes != A_hat.n_nodes:
        raise ContractError("features, graph and labels disagree on node count")
    rng = np.random.default_rng(hyper.seed)
    params = init_params(X.shape[1], labels.n_classes, hyper, rng)
    arrays = {k: v.copy() for k, v in params.arrays().items()}
    m1 = {k: np.zeros_like(v) for k, v in arrays.items()}
    m2 = {k: np.zeros_like(v) for k, v in arrays.items()}

    losses, train_acc, val_acc = [], [], []
    has_val = len(split.val_idx) > 0
    best, best_val, best_epoch = params, -1.0, 0
    for epoch in range(1, hyper.epochs + 1):
        try:
            loss, grads = loss_and_grads(params, A_hat, X, split, labels, dropout_rng=rng)
        except NumericError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc
        if not np.isfinite(loss):
            raise TrainingError(f"training diverged at epoch {epoch}: loss is {loss}")
        b1c = 1.0 - ADAM_BETA1**epoch
        b2c = 1.0 - ADAM_BETA2**epoch
        for k in arrays:
            g = grads[k]
            m1[k] = ADAM_BETA1 * m1[k] + (1.0 - ADAM_BETA1) * g
            m2[k] = ADAM_BETA2 * m2[k] + (1.0 - ADAM_BETA2) * g * g
            arrays[k] = arrays[k] - hyper.learning_rate * (m1[k] / b1c) / (np.sqrt(m2[k] / b2c) + ADAM_EPS)
        try:
            params = params.with_arrays(arrays)
            Z = gcn_forward(params, A_hat, X)
        except NumericError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc
        losses.append(loss)
        train_acc.append(_accuracy(Z, labels, split.labeled_idx))
        if has_val:
            acc = _accuracy(Z, labels, split.val_idx)
            val_acc.append(acc)
            if acc > best_val:
                best, best_val, best_epoch = params, acc, epoch
    if not has_val:
        best, best_epoch = params, hyper.epochs
    return TrainResult(best, losses, train_acc, val_acc, best_epoch)


def predict(params: GcnParams, X, A_hat) -> tuple[np.ndarray, np.ndarray]:
    """Argmax class (lowest id on ties) and its probability for every node."""
    Z = gcn_forward(params, A_hat, X)
    cls = np.argmax(Z, axis=1)
    return cls, Z[np.arange(len(cls)), cls]


def pseudo_label(params: GcnParams, X, A_hat, split: Split) -> PseudoLabels:
    cls, conf = predict(params, X, A_hat)
    nodes = split.unlabeled_idx(len(cls))
    return PseudoLabels(nodes, cls[nodes], conf[nodes])


def evaluate_accuracy(params: GcnParams, X, A_hat, labels: LabelTable, idx) -> float:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ContractError("cannot evaluate accuracy on an empty index set")
    if np.any(labels.labels[idx] == UNKNOWN):
        raise ContractError("evaluation set contains nodes with unknown labels")
    return _accuracy(gcn_forward(params, A_hat, X), labels, idx)


def save_checkpoint(params: GcnParams, path) -> None:
    """Text checkpoint: header, hyper JSON, then each array as shape line + rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# SFGL-GCN v1\n")
        fh.write("hyper " + json.dumps(asdict(params.hyper), sort_keys=True) + "\n")
        for name, arr in params.arrays().items():
            fh.write(f"{name} {' '.join(str(s) for s in arr.shape)}\n")
            for row in np.atleast_2d(arr):
                fh.write(" ".join(f"{v:.9g}" for v in row.tolist()) + "\n")


def load_checkpoint(path) -> GcnParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "# SFGL-GCN v1":
        raise ParseError(f"{path}: not an SFGL-GCN v1 checkpoint")
    if not lines[1].startswith("hyper "):
        raise ParseError(f"{path}:2: missing hyper line")
    hyper = GcnHyper(**json.loads(lines[1][6:]))
    arrays, i = {}, 2
    for name in GcnParams.NAMES:
        head = lines[i].split()
        if not head or head[0] != name:
            raise ParseError(f"{path}:{i + 1}: expected {name}")
        shape = tuple(int(s) for s in head[1:])
        n_rows = shape[0] if len(shape) == 2 else 1
        rows = [np.array(lines[i + 1 + r].split(), dtype=np.float64) for r in range(n_rows)]
        arrays[name] = np.vstack(rows).reshape(shape) if rows else np.zeros(shape)
        i += 1 + n_rows
    return GcnParams(**arrays, hyper=hyper)


def save_pseudo_labels(path, labels: LabelTable, split: Split, pl: PseudoLabels) -> None:
    """TSV over all nodes: ``node_id label confidence is_pseudo``."""
    n = labels.n_nodes
    lab = np.full(n, UNKNOWN, dtype=np.int64)
    conf = np.zeros(n)
    pseudo = np.zeros(n, dtype=np.int64)
    lab[split.labeled_idx] = labels.labels[split.labeled_idx]
    conf[split.labeled_idx] = 1.0
    lab[pl.nodes], conf[pl.nodes], pseudo[pl.nodes] = pl.labels, pl.confidence, 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node_id\tlabel\tconfidence\tis_pseudo\n")
        for i in range(n):
            fh.write(f"{i}\t{lab[i]}\t{conf[i]:.9g}\t{pseudo[i]}\n")


def load_pseudo_labels(path):
    """Inverse of ``save_pseudo_labels``: arrays (label, confidence, is_pseudo)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["node_id", "label", "confidence", "is_pseudo"]:
            raise ParseError(f"{path}: unexpected header {header}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 columns")
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])))
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ParseError(f"{path}: node ids must cover 0..n-1 exactly once")
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return arr[:, 1].astype(np.int64), arr[:, 2], arr[:, 3].astype(np.int64)
