"""Shared data loading for the experiment scripts."""

import os
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from sfgl.dataset import LabelTable, SparseFeatureMatrix, load_linqs


def add_data_args(parser):
    parser.add_argument("--cora-dir", default=os.environ.get("SFGL_CORA_DIR"),
                        help="directory holding cora.content and cora.cites (default $SFGL_CORA_DIR)")
    parser.add_argument("--synthetic", action="store_true",
                        help="use a synthetic bag-of-words corpus instead of Cora")


def synthetic_corpus(n=2708, vocab=1433, n_classes=7, seed=0):
    """Binary bag-of-words with Zipfian word popularity, class topic words and varied lengths."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, n_classes, size=n)
    pop = 1.0 / np.arange(1, vocab + 1) ** 1.1
    topic = np.array_split(rng.permutation(vocab), n_classes)
    lengths = rng.integers(5, 41, size=n)
    rows, cols = [], []
    for i in range(n):
        p = pop.copy()
        p[topic[y[i]]] *= 4.0
        words = rng.choice(vocab, size=lengths[i], replace=False, p=p / p.sum())
        rows += [i] * len(words)
        cols += words.tolist()
    M = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, vocab))
    return SparseFeatureMatrix.from_scipy(M), LabelTable(n, n_classes, y), np.zeros((0, 2), dtype=np.int64)


def load(args):
    """Return ``(F, labels, edges, source)`` from Cora or the synthetic stand-in."""
    if not args.synthetic and args.cora_dir:
        root = Path(args.cora_dir)
        cites = root / "cora.cites"
        F, labels, edges, _ = load_linqs(root / "cora.content", cites if cites.exists() else None)
        return F, labels, edges, f"cora ({root})"
    if not args.synthetic:
        raise SystemExit("no Cora directory given; pass --cora-dir or --synthetic")
    F, labels, edges = synthetic_corpus()
    return F, labels, edges, "synthetic bag-of-words"
