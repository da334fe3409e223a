"""``sfgl`` command line.

Exit codes: 0 success, 1 runtime failure (error JSON on stdout), 2 usage error.
Every subcommand writes a JSON report with the resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import gcn, knn, pipeline, scalefree
from .dataset import LabelTable, Split, load_features, load_labels, make_split, tfidf_transform
from .errors import ConfigError, SFGLError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(pipeline._plain(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _report(out: Path, command: str, config: dict, **payload) -> dict:
    rep = {"command": command, "config": config, "seed": config.get("seed"),
           "timestamp": datetime.now(timezone.utc).isoformat(), **payload}
    _write_json(out / "report.json", rep)
    return rep


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, *names) -> dict:
    return {n: getattr(args, n) for n in names}


def _features(args):
    if getattr(args, "embeddings", None):
        _existing(args.embeddings, "embeddings file")
        return pipeline.import_embeddings(args.embeddings).values
    _existing(args.features, "feature file")
    F = load_features(args.features, args.format)
    return tfidf_transform(F) if args.tfidf else F


def _n_rows(X) -> int:
    return X.n_rows if hasattr(X, "n_rows") else X.shape[0]


def _hyper(args) -> gcn.GcnHyper:
    return gcn.GcnHyper(args.hidden, args.lr, args.dropout, args.weight_decay, args.epochs, args.seed)


def cmd_build_graph(args) -> int:
    out = _outdir(args)
    _existing(args.features, "feature file")
    F = load_features(args.features, args.format)
    if args.tfidf:
        F = tfidf_transform(F)
    G = knn.build_knn_graph(F, args.k, args.metric)
    knn.save_graph(G, out / "graph.edges")
    knn.save_degree_csv(knn.degree_report(G), out / "degrees.csv")
    stats = pipeline.graph_stats(G)
    _write_json(out / "stats.json", stats)
    _report(out, "build-graph", _config(args, "features", "format", "tfidf", "k", "metric"), stats=stats)
    return EXIT_OK


def cmd_degrees(args) -> int:
    out = _outdir(args)
    _existing(args.graph, "graph file")
    G = knn.load_graph(args.graph)
    rep = knn.degree_report(G)
    knn.save_degree_csv(rep, out / "degrees.csv")
    _report(out, "degrees", _config(args, "graph"),
            n_undirected_edges=rep.n_undirected_edges,
            degree_identity_holds=rep.degree_identity_holds(),
            max_in_degree=int(rep.in_degree.max()))
    return EXIT_OK


def _read_degrees(path: Path) -> np.ndarray:
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if lines and lines[0].startswith("node,"):
        col = lines[0].split(",").index("in")
        return np.array([int(ln.split(",")[col]) for ln in lines[1:]], dtype=np.int64)
    return np.array([int(float(ln.split()[0])) for ln in lines], dtype=np.int64)


def cmd_fit(args) -> int:
    out = _outdir(args)
    if args.graph:
        _existing(args.graph, "graph file")
        degrees = knn.degree_report(knn.load_graph(args.graph)).in_degree
    else:
        degrees = _read_degrees(_existing(args.degrees, "degree file"))
    sample = scalefree.DegreeSample(degrees)

    fits = {}
    theta_min = args.theta_min
    if args.model in ("powerlaw", "both"):
        pl = scalefree.fit_power_law(sample, theta_min)
        fits["powerlaw"] = pl
        theta_min = pl.theta_min
    if args.model in ("exponential", "both"):
        if theta_min is None:
            theta_min = int(sample.positive.min()) if sample.positive.size else 1
        fits["exponential"] = scalefree.fit_exponential(sample, theta_min)
    result = {"fits": [f.to_dict() for f in fits.values()], "n_zero": sample.n_zero}
    if len(fits) == 2:
        result["comparison"] = scalefree.compare_fits(fits["powerlaw"], fits["exponential"]).to_dict()
        result["preferred"] = result["comparison"]["preferred"]
    _write_json(out / "fit.json", result)

    bins = scalefree.log_binned_histogram(sample, args.bins_per_decade)
    with open(out / "histogram.csv", "w", encoding="utf-8") as fh:
        fh.write("bin_center,density,count\n")
        for b in bins:
            fh.write(f"{b.center!r},{b.density!r},{b.count}\n")
    _write_fit_curve(out / "fit_curve.csv", sample, fits)
    _report(out, "fit", _config(args, "degrees", "graph", "model", "theta_min", "bins_per_decade"), **result)
    return EXIT_OK


def _write_fit_curve(path: Path, sample, fits: dict) -> None:
    """Fitted pmfs scaled to the positive-degree sample, for log-log overlays."""
    pos = sample.positive
    theta = np.arange(1, int(pos.max()) + 1)
    cols = {}
    for name, f in fits.items():
        frac = np.count_nonzero(pos >= f.theta_min) / pos.size
        t = theta.astype(float)
        if name == "powerlaw":
            pmf = t ** -f.alpha / scalefree.hurwitz_zeta(f.alpha, f.theta_min)
        else:
            pmf = -np.expm1(-f.lam) * np.exp(-f.lam * (t - f.theta_min))
        cols[name] = np.where(theta >= f.theta_min, frac * pmf, np.nan)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["theta", *cols]) + "\n")
        for i, t in enumerate(theta.tolist()):
            fh.write(",".join([str(t)] + [repr(float(c[i])) for c in cols.values()]) + "\n")


def cmd_ba_gen(args) -> int:
    if args.n <= args.m:
        raise UsageError(f"need n > m >= 1, got n={args.n}, m={args.m}")
    out = _outdir(args)
    g = scalefree.generate_ba_graph(args.n, args.m, args.seed)
    with open(out / "ba.edges", "w", encoding="utf-8") as fh:
        for u, v in g.edges.tolist():
            fh.write(f"{u} {v}\n")
    deg = g.degrees()
    fit = None
    try:
        fit = scalefree.fit_power_law(deg).to_dict()
    except SFGLError as exc:
        fit = {"model": "powerlaw", "error": str(exc)}
    _write_json(out / "fit.json", fit)
    _report(out, "ba-gen", _config(args, "n", "m", "seed"), n_edges=len(g.edges), fit=fit)
    return EXIT_OK


def _load_split(path) -> Split:
    return Split.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _train_common(args) -> tuple:
    out = _outdir(args)
    X = _features(args)
    _existing(args.graph, "graph file")
    _existing(args.labels, "label file")
    G = knn.load_graph(args.graph)
    labels = load_labels(args.labels, _n_rows(X))
    if getattr(args, "split", None):
        split = _load_split(_existing(args.split, "split file"))
    else:
        if args.budget is None:
            raise UsageError("either --split or --budget is required")
        split = make_split(labels, args.budget, args.strategy, args.seed, args.n_val)
    A = knn.symmetrize(G)
    res = gcn.train_gcn(X, A, labels, split, _hyper(args))
    return out, X, G, labels, split, A, res


_HYPER_KEYS = ("hidden", "lr", "dropout", "weight_decay", "epochs", "seed")


def cmd_train(args) -> int:
    out, X, G, labels, split, A, res = _train_common(args)
    A_hat = gcn.normalize_adjacency(A)
    gcn.save_checkpoint(res.params, out / "model.ckpt")
    _write_json(out / "split.json", split.to_dict())
    pl = gcn.pseudo_label(res.params, X, A_hat, split)
    gcn.save_pseudo_labels(out / "pseudo_labels.tsv", labels, split, pl)
    metrics = {
        "loss_history": res.loss_history,
        "train_accuracy_history": res.train_accuracy,
        "val_accuracy_history": res.val_accuracy,
        "train_accuracy": gcn.evaluate_accuracy(res.params, X, A_hat, labels, split.labeled_idx),
        "test_accuracy": (gcn.evaluate_accuracy(res.params, X, A_hat, labels, split.test_idx)
                          if len(split.test_idx) else None),
        "best_epoch": res.best_epoch,
    }
    cfg = _config(args, "features", "embeddings", "graph", "labels", "budget", "strategy",
                  "n_val", *_HYPER_KEYS)
    _write_json(out / "metrics.json", {"config": cfg, **metrics})
    _report(out, "train", cfg, **metrics)
    return EXIT_OK


def cmd_pseudo_label(args) -> int:
    out = _outdir(args)
    X = _features(args)
    params = gcn.load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    G = knn.load_graph(_existing(args.graph, "graph file"))
    labels = load_labels(_existing(args.labels, "label file"), _n_rows(X))
    split = _load_split(_existing(args.split, "split file"))
    pl = gcn.pseudo_label(params, X, gcn.normalize_adjacency(knn.symmetrize(G)), split)
    gcn.save_pseudo_labels(out / "pseudo_labels.tsv", labels, split, pl)
    _report(out, "pseudo-label", _config(args, "checkpoint", "features", "embeddings", "graph",
                                         "labels", "split"),
            n_pseudo=len(pl.nodes), pseudo_label_accuracy=pipeline._pseudo_accuracy(labels, pl))
    return EXIT_OK


def cmd_export_finetune(args) -> int:
    out = _outdir(args)
    lab, conf, is_pseudo = gcn.load_pseudo_labels(_existing(args.pseudo_labels, "pseudo-label file"))
    n = len(lab)
    true_idx = np.flatnonzero(is_pseudo == 0)
    known = np.where(is_pseudo == 0, lab, -1)
    labels = LabelTable(n, int(lab.max()) + 1, known)
    split = Split(labeled_idx=true_idx, test_idx=np.zeros(0, dtype=np.int64), seed=0)
    pl_nodes = np.flatnonzero(is_pseudo == 1)
    pl = gcn.PseudoLabels(pl_nodes, lab[pl_nodes], conf[pl_nodes])
    pipeline.write_finetune_export(out / "finetune_export.tsv", labels, split, pl)
    _report(out, "export-finetune", _config(args, "pseudo_labels"), m=len(true_idx), n=len(pl_nodes))
    return EXIT_OK


def cmd_import_embeddings(args) -> int:
    out = _outdir(args)
    E = pipeline.import_embeddings(_existing(args.embeddings, "embeddings file"), args.n_nodes)
    pipeline.export_embeddings(E, out / "embeddings.emb")
    _report(out, "import-embeddings", _config(args, "embeddings", "n_nodes"),
            n_nodes=E.n_nodes, dim=E.dim)
    return EXIT_OK


def cmd_classify(args) -> int:
    out, X, G, labels, split, A, res = _train_common(args)
    A_hat = gcn.normalize_adjacency(A)
    pred, conf = gcn.predict(res.params, X, A_hat)
    unl = split.unlabeled_idx(labels.n_nodes)
    gcn.save_checkpoint(res.params, out / "model.ckpt")
    gcn.save_pseudo_labels(out / "final_labels.tsv", labels, split,
                           gcn.PseudoLabels(unl, pred[unl], conf[unl]))
    acc = (gcn.evaluate_accuracy(res.params, X, A_hat, labels, split.test_idx)
           if len(split.test_idx) else None)
    cfg = _config(args, "features", "embeddings", "graph", "labels", "split", "budget",
                  "strategy", "n_val", *_HYPER_KEYS)
    _write_json(out / "metrics.json", {"config": cfg, "test_accuracy": acc,
                                       "loss_history": res.loss_history})
    _report(out, "classify", cfg, test_accuracy=acc)
    return EXIT_OK


def _pipeline_config(args) -> pipeline.PipelineConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.out:
        overrides["out"] = args.out
    try:
        return pipeline.PipelineConfig.from_file(_existing(args.config, "config file"), overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    stage = args.stage or ("self-contained" if cfg.mode == "self-contained" else "a")
    out = Path(cfg.out)
    if stage == "a":
        pipeline.run_stage_a(cfg, out_dir=out)
    elif stage == "self-contained":
        pipeline.run_self_contained(cfg, out_dir=out)
    elif stage in ("b", "iterate"):
        emb = args.embeddings or cfg.embeddings
        if not emb:
            print(json.dumps({"error": "embeddings required", "stage": stage}))
            return EXIT_RUNTIME
        data = pipeline.load_dataset(cfg)
        E = pipeline.import_embeddings(emb, data.n_nodes)
        if stage == "b":
            pipeline.run_stage_b(cfg, E, data=data, out_dir=out)
        else:
            pipeline.run_iteration(cfg, E, data=data, out_dir=out)
    elif stage == "compare-real":
        pipeline.run_real_graph_comparison(cfg, out_dir=out)
    _write_json(out / "resolved_config.json", cfg.to_dict())
    return EXIT_OK


def cmd_compare_real(args) -> int:
    cfg = _pipeline_config(args)
    edges = args.edges or cfg.edges
    if not edges:
        raise UsageError("compare-real needs --edges or an 'edges' config key")
    _existing(edges, "edge list")
    pipeline.run_real_graph_comparison(cfg, edges, out_dir=Path(cfg.out))
    return EXIT_OK


def _add_feature_source(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--features", help="feature matrix file")
    g.add_argument("--embeddings", help="SFGL-EMB embedding file")
    p.add_argument("--format", default="coo-text", choices=["coo-text", "dense-text"])
    p.add_argument("--tfidf", action="store_true", help="apply tf-idf weighting to --features")


def _add_hyper(p):
    d = gcn.GcnHyper()
    p.add_argument("--hidden", type=_positive_int, default=d.hidden)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--seed", type=int, default=d.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfgl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="exact KNN graph from a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--format", default="coo-text", choices=["coo-text", "dense-text"])
    p.add_argument("--tfidf", action="store_true")
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--metric", default="cosine", choices=knn.METRICS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("degrees", help="degree report of a saved graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrees)

    p = sub.add_parser("fit", help="power-law / exponential fits of a degree sample")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--degrees")
    g.add_argument("--graph")
    p.add_argument("--model", default="both", choices=["powerlaw", "exponential", "both"])
    p.add_argument("--theta-min", type=_positive_int, default=None)
    p.add_argument("--bins-per-decade", type=_positive_int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ba-gen", help="preferential-attachment reference graph")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--m", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ba_gen)

    for name, func, helptext in (("train", cmd_train, "train the pseudo-labeling GCN"),
                                 ("classify", cmd_classify, "train the final GCN and classify")):
        p = sub.add_parser(name, help=helptext)
        _add_feature_source(p)
        p.add_argument("--graph", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--split", help="split JSON; sampled from --budget when absent")
        p.add_argument("--budget", type=_positive_int)
        p.add_argument("--strategy", choices=["uniform", "per-class-balanced"])
        p.add_argument("--n-val", type=int, default=0)
        _add_hyper(p)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("pseudo-label", help="pseudo-labels from a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_feature_source(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("export-finetune", help="finetune export from a pseudo-label TSV")
    p.add_argument("--pseudo-labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_finetune)

    p = sub.add_parser("import-embeddings", help="validate an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--n-nodes", type=_positive_int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_embeddings)

    p = sub.add_parser("run", help="run a pipeline stage from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", choices=["a", "b", "iterate", "compare-real", "self-contained"])
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare-real", help="real graph vs KNN graphs under the same GCN")
    p.add_argument("--config", required=True)
    p.add_argument("--edges")
    p.add_argument("--out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_compare_real)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad usage
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sfgl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SFGLError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
