"""Convert LINQS Cora files into the package's text formats plus a run config.

    python3 scripts/convert_cora.py --cora-dir path/to/cora --out data/cora
"""

import argparse
from pathlib import Path

import numpy as np

from sfgl.dataset import load_linqs, save_features, save_labels


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--cora-dir", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    root, out = Path(args.cora_dir), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    F, labels, edges, names = load_linqs(root / "cora.content", root / "cora.cites")
    save_features(F, out / "features.coo")
    save_labels(labels, out / "labels.txt")
    np.savetxt(out / "edges.txt", edges, fmt="%d")
    (out / "classes.txt").write_text("".join(f"{i} {c}\n" for i, c in enumerate(names)))
    (out / "cora.cfg").write_text(
        f"features = {out / 'features.coo'}\nlabels = {out / 'labels.txt'}\n"
        f"edges = {out / 'edges.txt'}\nk = 25\nbudget = 140\nstrategy = per-class-balanced\n"
        f"seeds = 0,1,2,3,4\ncompare_ks = 5,10,15,20,25\nout = {out / 'run'}\n")
    print(f"{F.n_rows} nodes, {F.n_cols} features, {labels.n_classes} classes, {len(edges)} citations -> {out}")


if __name__ == "__main__":
    main()
