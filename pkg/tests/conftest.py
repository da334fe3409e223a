import numpy as np
import pytest
import scipy.sparse as sp

from sfgl.dataset import LabelTable, SparseFeatureMatrix


def random_features(n, d, density=0.4, seed=0, integer=False):
    rng = np.random.default_rng(seed)
    M = sp.random(n, d, density=density, random_state=rng, format="csr")
    if integer:
        M.data = rng.integers(1, 4, size=M.nnz).astype(float)
    return SparseFeatureMatrix.from_scipy(M)


def two_cliques(size=5):
    """Two disconnected cliques with one-hot identity features."""
    n = 2 * size
    A = np.zeros((n, n))
    A[:size, :size] = 1
    A[size:, size:] = 1
    np.fill_diagonal(A, 0)
    y = np.array([0] * size + [1] * size)
    return np.eye(n), sp.csr_matrix(A), LabelTable(n, 2, y)


@pytest.fixture
def cliques():
    return two_cliques()


def clustered_features(n_per_class=5, n_classes=2, dim=20, seed=0):
    """Non-negative bag-of-words-like rows whose support is class specific."""
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    block = dim // n_classes
    for c in range(n_classes):
        for _ in range(n_per_class):
            v = np.zeros(dim)
            v[c * block:(c + 1) * block] = rng.integers(1, 4, size=block)
            rows.append(v)
            labels.append(c)
    return SparseFeatureMatrix.from_dense(np.array(rows)), LabelTable(len(labels), n_classes, np.array(labels))


_ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
