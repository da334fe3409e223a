import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from sfgl.dataset import UNKNOWN, LabelTable, Split
from sfgl.errors import ContractError
from sfgl.gcn import (
    GcnHyper, GcnParams, NormalizedAdjacency, evaluate_accuracy, gcn_forward, gcn_loss,
    gradient_check, init_params, load_checkpoint, load_pseudo_labels, loss_and_grads,
    normalize_adjacency, pseudo_label, save_checkpoint, save_pseudo_labels, train_gcn,
)

from conftest import two_cliques


def random_undirected(n, p, rng):
    A = (rng.random((n, n)) < p).astype(float)
    A = np.triu(A, 1)
    return sp.csr_matrix(A + A.T)


def random_instance(seed, n=8, d=5, C=3, hidden=6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    A_hat = normalize_adjacency(random_undirected(n, 0.35, rng))
    y = rng.integers(0, C, size=n)
    labels = LabelTable(n, C, y)
    perm = rng.permutation(n)
    split = Split(labeled_idx=np.sort(perm[: n // 2]), test_idx=np.sort(perm[n // 2:]), seed=seed)
    params = init_params(d, C, GcnHyper(hidden=hidden, seed=seed))
    params = params.with_arrays({"b1": rng.normal(size=hidden) * 0.1, "b2": rng.normal(size=C) * 0.1})
    return X, A_hat, labels, split, params


def dense_reference(params, A, X):
    """Loop-based forward pass used as an independent oracle."""
    n = len(X)
    A = A.toarray()
    XW = X @ params.W1
    pre = np.zeros_like(XW)
    for i in range(n):
        for j in range(n):
            pre[i] += A[i, j] * XW[j]
    H = np.maximum(pre + params.b1, 0)
    HW = H @ params.W2
    logits = np.zeros_like(HW)
    for i in range(n):
        for j in range(n):
            logits[i] += A[i, j] * HW[j]
    logits += params.b2
    Z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return Z / Z.sum(axis=1, keepdims=True)


# adjacency normalization

def test_normalize_isolated_node():
    assert normalize_adjacency(sp.csr_matrix((1, 1))).toarray().tolist() == [[1.0]]


def test_normalize_single_edge():
    A_hat = normalize_adjacency(sp.csr_matrix([[0, 1], [1, 0]]))
    np.testing.assert_allclose(A_hat.toarray(), 0.5, rtol=0, atol=1e-15)


def test_normalize_rejects_bad_input():
    with pytest.raises(ContractError):
        normalize_adjacency(sp.csr_matrix([[0, 1], [0, 0]]))
    with pytest.raises(ContractError):
        normalize_adjacency(sp.csr_matrix([[1, 0], [0, 0]]))


def test_normalized_spectral_radius_power_iteration():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        M = normalize_adjacency(random_undirected(n, rng.random(), rng)).toarray()
        assert np.allclose(M, M.T)
        assert np.all(np.diag(M) > 0) and M.max() <= 1 + 1e-15
        v = rng.random(n) + 0.1
        for _ in range(300):
            v = M @ v
            v /= np.linalg.norm(v)
        assert abs(v @ M @ v) <= 1 + 1e-9


# forward

def test_forward_zero_params_uniform():
    X, A_hat, labels, split, p = random_instance(0)
    zero = p.with_arrays({k: np.zeros_like(v) for k, v in p.arrays().items()})
    np.testing.assert_allclose(gcn_forward(zero, A_hat, X), 1 / 3, atol=1e-15)


def test_forward_single_node_identity():
    x = np.array([[0.3, -1.2, 2.0]])
    A_hat = normalize_adjacency(sp.csr_matrix((1, 1)))
    p = GcnParams(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3), GcnHyper(hidden=3))
    Z = gcn_forward(p, A_hat, x)
    relu = np.maximum(x, 0)
    expected = np.exp(relu) / np.exp(relu).sum()
    np.testing.assert_allclose(Z, expected, rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_dense_reference(seed):
    X, A_hat, labels, split, p = random_instance(seed)
    Z = gcn_forward(p, A_hat, X)
    assert np.max(np.abs(Z - dense_reference(p, A_hat, X))) < 1e-10
    Zs = gcn_forward(p, A_hat, sp.csr_matrix(X))
    assert np.max(np.abs(Zs - Z)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 30))
def test_softmax_rows_sum_to_one(seed, scale):
    X, A_hat, labels, split, p = random_instance(seed)
    p = p.with_arrays({"W1": p.W1 * scale, "W2": p.W2 * scale})
    Z = gcn_forward(p, A_hat, X, dropout_rng=np.random.default_rng(seed))
    np.testing.assert_allclose(Z.sum(axis=1), 1.0, atol=1e-6)


def test_permutation_equivariance():
    X, A_hat, labels, split, p = random_instance(7)
    perm = np.random.default_rng(1).permutation(len(X))
    P = sp.csr_matrix((np.ones(len(perm)), (np.arange(len(perm)), perm)))
    A_perm = NormalizedAdjacency(len(X), (P @ A_hat.matrix @ P.T).tocsr())
    Z = gcn_forward(p, A_hat, X)
    np.testing.assert_allclose(gcn_forward(p, A_perm, X[perm]), Z[perm], atol=1e-13)


# loss

def test_loss_perfect_and_uniform():
    labels = LabelTable(3, 3, [0, 2, 1])
    split = Split(np.array([0, 1, 2]), np.zeros(0), 0)
    p = GcnParams(np.zeros((2, 2)), np.zeros(2), np.zeros((2, 3)), np.zeros(3), GcnHyper(weight_decay=0.0))
    assert gcn_loss(np.eye(3)[[0, 2, 1]], split, labels, p) == 0.0
    assert gcn_loss(np.full((3, 3), 1 / 3), split, labels, p) == pytest.approx(math.log(3), rel=1e-15)


def test_loss_against_scalar_recomputation():
    X, A_hat, labels, split, p = random_instance(3)
    Z = gcn_forward(p, A_hat, X)
    ce = -sum(math.log(Z[i, labels.labels[i]]) for i in split.labeled_idx) / split.m
    reg = 0.5 * p.hyper.weight_decay * (sum(v * v for v in p.W1.ravel()) + sum(v * v for v in p.W2.ravel()))
    assert gcn_loss(Z, split, labels, p) == pytest.approx(ce + reg, rel=1e-12, abs=1e-12)
    loss, _ = loss_and_grads(p, A_hat, X, split, labels)
    assert loss == pytest.approx(ce + reg, rel=1e-12)


def test_loss_rejects_unknown_labeled_node():
    labels = LabelTable(2, 2, [0, UNKNOWN])
    split = Split(np.array([0, 1]), np.zeros(0), 0)
    p = init_params(2, 2, GcnHyper(hidden=2))
    with pytest.raises(ContractError):
        gcn_loss(np.full((2, 2), 0.5), split, labels, p)


# gradients

def test_gradient_check_zero_point():
    X, A_hat, labels, split, p = random_instance(2)
    zero = p.with_arrays({k: np.zeros_like(v) for k, v in p.arrays().items()})
    assert gradient_check(X, A_hat, labels, split, zero) < 1e-4


@pytest.mark.parametrize("seed", range(4))
def test_gradient_check_random(seed):
    X, A_hat, labels, split, p = random_instance(seed)
    assert gradient_check(X, A_hat, labels, split, p) < 1e-4


def test_gradient_error_grows_with_step():
    X, A_hat, labels, split, p = random_instance(11)
    assert gradient_check(X, A_hat, labels, split, p, step=1e-2) > gradient_check(X, A_hat, labels, split, p, step=1e-5)


# training

def test_train_separable_toy(cliques):
    X, A, labels = cliques
    split = Split(np.array([0, 5]), np.array([1, 2, 3, 4, 6, 7, 8, 9]), 0)
    res = train_gcn(X, A, labels, split)
    assert res.train_accuracy[-1] == 1.0
    A_hat = normalize_adjacency(A)
    assert evaluate_accuracy(res.params, X, A_hat, labels, split.test_idx) == 1.0
    assert all(b < a for a, b in zip(res.loss_history[:10], res.loss_history[1:10])) or \
        res.loss_history[9] < res.loss_history[0]
    pl = pseudo_label(res.params, X, A_hat, split)
    assert pl.nodes.tolist() == split.test_idx.tolist()
    np.testing.assert_array_equal(pl.labels, labels.labels[pl.nodes])
    assert np.all((pl.confidence > 0) & (pl.confidence <= 1))


def test_loss_decreases_first_ten_epochs(cliques):
    X, A, labels = cliques
    split = Split(np.array([0, 5]), np.array([1, 2, 3, 4, 6, 7, 8, 9]), 0)
    res = train_gcn(X, A, labels, split, GcnHyper(epochs=10))
    assert res.loss_history[-1] < res.loss_history[0]


def test_train_deterministic(cliques):
    X, A, labels = cliques
    split = Split(np.array([0, 5]), np.array([1, 2, 3, 4, 6, 7, 8, 9]), 0)
    a = train_gcn(X, A, labels, split, GcnHyper(epochs=30, seed=4))
    b = train_gcn(X, A, labels, split, GcnHyper(epochs=30, seed=4))
    assert a.params == b.params and a.loss_history == b.loss_history
    c = train_gcn(X, A, labels, split, GcnHyper(epochs=30, seed=5))
    assert not c.params == a.params


def test_train_returns_best_validation_epoch(cliques):
    X, A, labels = cliques
    split = Split(np.array([0, 5]), np.array([2, 3, 4, 7, 8, 9]), 0, val_idx=np.array([1, 6]))
    res = train_gcn(X, A, labels, split, GcnHyper(epochs=40))
    assert len(res.val_accuracy) == 40
    assert res.val_accuracy[res.best_epoch - 1] == max(res.val_accuracy)
    assert res.best_epoch == 1 + int(np.argmax(res.val_accuracy))


def test_pseudo_label_tie_break_and_domain():
    X, A_hat, labels, split, p = random_instance(0)
    zero = p.with_arrays({k: np.zeros_like(v) for k, v in p.arrays().items()})
    pl = pseudo_label(zero, X, A_hat, split)
    assert np.all(pl.labels == 0)
    assert not np.isin(pl.nodes, split.labeled_idx).any()


def test_evaluate_accuracy():
    X, A_hat, labels, split, p = random_instance(0)
    pred = np.argmax(gcn_forward(p, A_hat, X), axis=1)
    oracle = LabelTable(len(pred), 3, pred)
    assert evaluate_accuracy(p, X, A_hat, oracle, np.arange(len(pred))) == 1.0
    with pytest.raises(ContractError):
        evaluate_accuracy(p, X, A_hat, oracle, [])
    with pytest.raises(ContractError):
        evaluate_accuracy(p, X, A_hat, LabelTable(8, 3, [UNKNOWN] * 8), [0])


def test_uniform_logits_accuracy_half_in_expectation():
    X, A_hat, _, _, p = random_instance(0, n=8, C=2)
    zero = p.with_arrays({k: np.zeros_like(v) for k, v in p.arrays().items()})
    rng = np.random.default_rng(0)
    base = np.array([0, 1] * 4)
    accs = []
    for _ in range(400):
        flip = rng.integers(0, 2)
        y = base ^ flip
        accs.append(evaluate_accuracy(zero, X, A_hat, LabelTable(8, 2, rng.permutation(y)), np.arange(8)))
    assert abs(np.mean(accs) - 0.5) < 1e-12  # balanced labels: class 0 is always half


def test_checkpoint_roundtrip(tmp_path):
    X, A_hat, labels, split, p = random_instance(5)
    save_checkpoint(p, tmp_path / "m.ckpt")
    q = load_checkpoint(tmp_path / "m.ckpt")
    assert q.hyper == p.hyper
    for k, v in p.arrays().items():
        w = q.arrays()[k]
        assert w.shape == v.shape
        assert np.all(np.abs(w - v) <= 1e-6 * np.maximum(np.abs(v), 1e-300))
    save_checkpoint(q, tmp_path / "m2.ckpt")
    assert (tmp_path / "m.ckpt").read_text() == (tmp_path / "m2.ckpt").read_text()


def test_pseudo_label_tsv(tmp_path):
    X, A_hat, labels, split, p = random_instance(1)
    pl = pseudo_label(p, X, A_hat, split)
    save_pseudo_labels(tmp_path / "pl.tsv", labels, split, pl)
    lab, conf, is_pseudo = load_pseudo_labels(tmp_path / "pl.tsv")
    assert is_pseudo.sum() == len(pl.nodes)
    np.testing.assert_array_equal(lab[split.labeled_idx], labels.labels[split.labeled_idx])
    np.testing.assert_array_equal(lab[pl.nodes], pl.labels)
    assert np.all(conf[split.labeled_idx] == 1.0)
