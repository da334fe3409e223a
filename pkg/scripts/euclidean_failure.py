"""Zero in-degree counts of KNN graphs under each metric.

Distance metrics on sparse bag-of-words favour short documents as neighbours,
so many nodes are never chosen; cosine normalises length away.

    python3 scripts/euclidean_failure.py --cora-dir path/to/cora --k 5
"""

import argparse

import numpy as np

from sfgl import knn
from _data import add_data_args, load


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    add_data_args(ap)
    ap.add_argument("--k", type=int, default=5)
    args = ap.parse_args()
    F, _, _, source = load(args)
    print(f"{source}: n={F.n_rows}, k={args.k}")
    for metric in knn.METRICS:
        deg = knn.degree_report(knn.build_knn_graph(F, args.k, metric)).in_degree
        print(f"{metric:10s} zero in-degree={np.count_nonzero(deg == 0):5d}  max in-degree={deg.max()}")


if __name__ == "__main__":
    main()
