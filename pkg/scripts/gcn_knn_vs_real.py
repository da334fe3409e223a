"""GCN test accuracy on KNN graphs of several k, and on the citation graph when present.

    python3 scripts/gcn_knn_vs_real.py --cora-dir path/to/cora --seeds 0 1 2 3 4
"""

import argparse
import json

import numpy as np
import scipy.sparse as sp

from sfgl import gcn, knn
from sfgl.dataset import make_split
from _data import add_data_args, load


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    add_data_args(ap)
    ap.add_argument("--ks", type=int, nargs="+", default=[5, 15, 25])
    ap.add_argument("--budget", type=int, default=140)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--lr", type=float, default=0.001)
    args = ap.parse_args()
    F, labels, edges, source = load(args)
    n = F.n_rows
    graphs = {f"knn-k{k}": knn.symmetrize(knn.build_knn_graph(F, k)) for k in args.ks}
    if len(edges):
        graphs["citation"] = knn.symmetrize(
            sp.csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n)))
    results = {}
    for name, A in graphs.items():
        A_hat = gcn.normalize_adjacency(A)
        accs = []
        for s in args.seeds:
            split = make_split(labels, args.budget, "per-class-balanced", s)
            hyper = gcn.GcnHyper(learning_rate=args.lr, epochs=args.epochs, seed=s)
            res = gcn.train_gcn(F, A_hat, labels, split, hyper)
            accs.append(gcn.evaluate_accuracy(res.params, F, A_hat, labels, split.test_idx))
        results[name] = {"mean": float(np.mean(accs)), "std": float(np.std(accs)), "accuracies": accs}
        print(f"{name:10s} {np.mean(accs):.4f} +/- {np.std(accs):.4f}")
    print(json.dumps({"source": source, "results": results}))


if __name__ == "__main__":
    main()
