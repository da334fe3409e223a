"""Graph build -> pseudo-labeler -> external finetune hand-off -> final classifier.

Stage A builds the cosine KNN graph on shallow features, trains the
pseudo-labeling GCN and writes the finetune export. An external process turns
that export into text embeddings; stage B trains the final GCN on those
embeddings over the stage-A graph. ``run_iteration`` repeats the graph and
pseudo-label steps on the new embeddings. Every stage checkpoints to the
output directory so the external gap may span processes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import gcn, knn, scalefree
from .dataset import (
    UNKNOWN, LabelTable, SparseFeatureMatrix, Split, load_edge_list, load_features,
    load_labels, make_split, tfidf_transform,
)
from .errors import ConfigError, ContractError, FitError, ParseError, SFGLError, StageError

log = logging.getLogger(__name__)

EMB_MAGIC = "SFGL-EMB"
FT_MAGIC = "# SFGL-FT v1"

# fields that determine numeric results; paths to outputs and dispatch mode do not
_HASHED = (
    "features", "features_format", "tfidf", "labels", "k", "metric", "budget",
    "strategy", "n_val", "seed", "hidden", "learning_rate", "dropout",
    "weight_decay", "epochs",
)


@dataclass
class PipelineConfig:
    features: str | None = None
    features_format: str = "coo-text"
    tfidf: bool = False
    labels: str | None = None
    edges: str | None = None
    embeddings: str | None = None
    k: int = 25
    metric: str = "cosine"
    budget: int = 140
    strategy: str | None = None
    n_val: int = 0
    seed: int = 0
    seeds: tuple[int, ...] = ()
    hidden: int = 128
    learning_rate: float = 0.001
    dropout: float = 0.5
    weight_decay: float = 0.0005
    epochs: int = 200
    iterations: int = 0
    mode: str = "export-import"
    compare_ks: tuple[int, ...] = (25,)
    out: str = "out"

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.mode not in ("export-import", "self-contained"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.metric not in knn.METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        self.compare_ks = tuple(int(s) for s in self.compare_ks)

    @property
    def hyper(self) -> gcn.GcnHyper:
        return gcn.GcnHyper(self.hidden, self.learning_rate, self.dropout,
                            self.weight_decay, self.epochs, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"], d["compare_ks"] = list(self.seeds), list(self.compare_ks)
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in _HASHED}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        """Build from string-valued ``key=value`` pairs, converting by field type."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kw[key] = _convert(key, types[key], raw)
        return cls(**kw)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        return cls.from_mapping({**read_kv_file(path), **(overrides or {})})


def _convert(key, typ, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if typ == "bool":
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("1", "true", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ.startswith("tuple"):
            return tuple(int(t) for t in raw.replace(",", " ").split())
        if "None" in typ and raw.lower() in ("", "none", "auto"):
            return None
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_kv_file(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ContractError("embeddings must be an n x d matrix with d >= 1")
        if not np.all(np.isfinite(v)):
            raise ContractError("embeddings contain non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def export_embeddings(E: EmbeddingMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{EMB_MAGIC} v1 {E.n_nodes} {E.dim}\n")
        for row in E.values.tolist():
            fh.write(" ".join(repr(v) for v in row) + "\n")


def import_embeddings(path, n_nodes: int | None = None) -> EmbeddingMatrix:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"embeddings file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != EMB_MAGIC or head[1] != "v1":
            raise ParseError(f"{path}:1: expected '{EMB_MAGIC} v1 <n> <d>'")
        n, d = int(head[2]), int(head[3])
        if n_nodes is not None and n != n_nodes:
            raise ContractError(f"embeddings declare {n} rows, dataset has {n_nodes} nodes")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d:
                raise ContractError(f"{path}:{lineno}: expected {d} values, found {len(parts)}")
            try:
                rows.append([float(t) for t in parts])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
    if len(rows) != n:
        raise ContractError(f"{path}: expected {n} rows, found {len(rows)}")
    return EmbeddingMatrix(np.array(rows, dtype=np.float64).reshape(n, d))


@dataclass
class Dataset:
    F: SparseFeatureMatrix
    labels: LabelTable
    edges: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.F.n_rows


def load_dataset(config: PipelineConfig) -> Dataset:
    if not config.features or not config.labels:
        raise ConfigError("config needs both 'features' and 'labels'")
    F = load_features(config.features, config.features_format)
    if config.tfidf:
        F = tfidf_transform(F)
    labels = load_labels(config.labels, F.n_rows)
    return Dataset(F, labels)


@dataclass
class RunReport:
    config: dict
    seed: int
    config_hash: str
    stages: list = field(default_factory=list)
    timestamps: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, config: PipelineConfig) -> "RunReport":
        return cls(config.to_dict(), config.seed, config.config_hash())

    def add(self, stage: str, **metrics) -> dict:
        entry = {"stage": stage, "seed": self.seed, "config_hash": self.config_hash, **metrics}
        self.stages.append(entry)
        self.timestamps[stage] = datetime.now(timezone.utc).isoformat()
        return entry

    def to_dict(self, timestamps: bool = True) -> dict:
        d = {"config": self.config, "seed": self.seed, "config_hash": self.config_hash,
             "stages": self.stages}
        if timestamps:
            d["timestamps"] = self.timestamps
        return d

    def to_json(self, timestamps: bool = True) -> str:
        return json.dumps(_plain(self.to_dict(timestamps)), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def stage(self, name: str) -> dict:
        for s in self.stages:
            if s["stage"] == name:
                return s
        raise KeyError(name)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def _out_dir(config: PipelineConfig, out_dir) -> Path:
    p = Path(out_dir if out_dir is not None else config.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _state_path(out: Path) -> Path:
    return out / "state.json"


def load_state(out_dir) -> dict:
    p = _state_path(Path(out_dir))
    if not p.exists():
        raise ConfigError(f"no pipeline state in {out_dir}; run stage a first")
    return json.loads(p.read_text(encoding="utf-8"))


def _save_state(out: Path, state: dict) -> None:
    _state_path(out).write_text(json.dumps(state, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def graph_stats(G: knn.DirectedKnnGraph) -> dict:
    """Degree statistics and heavy-tail fits for one graph."""
    rep = knn.degree_report(G)
    stats = {
        "n_nodes": G.n_nodes, "k": G.k, "metric": G.metric,
        "n_directed_edges": G.n_nodes * G.k,
        "n_undirected_edges": rep.n_undirected_edges,
        "max_in_degree": int(rep.in_degree.max()),
        "n_zero_in_degree": int(np.count_nonzero(rep.in_degree == 0)),
        "degree_identity_holds": rep.degree_identity_holds(),
    }
    try:
        pl = scalefree.fit_power_law(rep.in_degree)
        ex = scalefree.fit_exponential(rep.in_degree, pl.theta_min)
        stats["power_law"] = pl.to_dict()
        stats["exponential"] = ex.to_dict()
        stats["preferred"] = scalefree.compare_fits(pl, ex).to_dict()
    except FitError as exc:
        stats["fit_error"] = str(exc)
    return stats


def write_finetune_export(path, labels: LabelTable, split: Split, pl: gcn.PseudoLabels) -> None:
    """Per-node supervision for the external finetuner.

    The header records the loss weights 1/m (true labels) and 1/n (pseudo
    labels) so the external objective is fully determined.
    """
    n_nodes = labels.n_nodes
    m, n = split.m, n_nodes - split.m
    w_true = 1.0 / m
    w_pseudo = 1.0 / n if n else 0.0
    lab = np.full(n_nodes, UNKNOWN, dtype=np.int64)
    conf = np.ones(n_nodes)
    pseudo = np.zeros(n_nodes, dtype=np.int64)
    lab[split.labeled_idx] = labels.labels[split.labeled_idx]
    lab[pl.nodes], conf[pl.nodes], pseudo[pl.nodes] = pl.labels, pl.confidence, 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{FT_MAGIC} m={m} n={n} w_true={w_true!r} w_pseudo={w_pseudo!r}\n")
        for i in range(n_nodes):
            fh.write(f"{i}\t{lab[i]}\t{pseudo[i]}\t{conf[i]:.9g}\n")


def read_finetune_export(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if " ".join(head[:3]) != FT_MAGIC:
            raise ParseError(f"{path}:1: not an SFGL-FT v1 export")
        meta = dict(t.split("=", 1) for t in head[3:])
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return {
        "m": int(meta["m"]), "n": int(meta["n"]),
        "w_true": float(meta["w_true"]), "w_pseudo": float(meta["w_pseudo"]),
        "node_id": arr[:, 0].astype(np.int64), "label": arr[:, 1].astype(np.int64),
        "is_pseudo": arr[:, 2].astype(np.int64), "confidence": arr[:, 3],
    }


def _pseudo_accuracy(labels: LabelTable, pl: gcn.PseudoLabels):
    known = labels.labels[pl.nodes] != UNKNOWN
    if not np.any(known):
        return None
    return float(np.mean(pl.labels[known] == labels.labels[pl.nodes][known]))


@dataclass
class StageAResult:
    graph: knn.DirectedKnnGraph
    split: Split
    pseudo: gcn.PseudoLabels
    export_path: Path
    report: RunReport
    params: gcn.GcnParams


def run_stage_a(config: PipelineConfig, data: Dataset | None = None, out_dir=None) -> StageAResult:
    """Features -> KNN graph -> pseudo-labeling GCN -> finetune export."""
    out = _out_dir(config, out_dir)
    report = RunReport.for_config(config)
    stage = "load"
    try:
        data = data or load_dataset(config)
        stage = "knn"
        G = knn.build_knn_graph(data.F, config.k, config.metric)
        knn.save_graph(G, out / "graph.edges")
        knn.save_degree_csv(knn.degree_report(G), out / "degrees.csv")
        report.add("graph", **graph_stats(G))

        stage = "split"
        split = make_split(data.labels, config.budget, config.strategy, config.seed, config.n_val)
        (out / "split.json").write_text(json.dumps(split.to_dict()) + "\n", encoding="utf-8")

        stage = "pseudo-labeler"
        res = gcn.train_gcn(data.F, knn.symmetrize(G), data.labels, split, config.hyper)
        A_hat = gcn.normalize_adjacency(knn.symmetrize(G))
        gcn.save_checkpoint(res.params, out / "stage_a.ckpt")
        pl = gcn.pseudo_label(res.params, data.F, A_hat, split)
        gcn.save_pseudo_labels(out / "pseudo_labels.tsv", data.labels, split, pl)
        test_acc = (gcn.evaluate_accuracy(res.params, data.F, A_hat, data.labels, split.test_idx)
                    if len(split.test_idx) else None)
        report.add("pseudo-labeler", m=split.m, n_unlabeled=len(pl.nodes),
                   final_loss=res.loss_history[-1] if res.loss_history else None,
                   train_accuracy=res.train_accuracy[-1] if res.train_accuracy else None,
                   pseudo_label_accuracy=_pseudo_accuracy(data.labels, pl),
                   test_accuracy=test_acc)

        stage = "export"
        export = out / "finetune_export.tsv"
        write_finetune_export(export, data.labels, split, pl)
    except SFGLError as exc:
        raise StageError(stage, exc) from exc

    report.save(out / "report_stage_a.json")
    _save_state(out, {"graph": "graph.edges", "split": "split.json", "iteration": 0,
                      "export": export.name, "feature_source": "shallow"})
    return StageAResult(G, split, pl, export, report, res.params)


@dataclass
class StageBResult:
    report: RunReport
    predictions: np.ndarray
    accuracy: float | None
    params: gcn.GcnParams


def _load_split(out: Path, state: dict) -> Split:
    return Split.from_dict(json.loads((out / state["split"]).read_text(encoding="utf-8")))


def run_stage_b(config: PipelineConfig, E: EmbeddingMatrix, graph: knn.DirectedKnnGraph | None = None,
                data: Dataset | None = None, out_dir=None, split: Split | None = None) -> StageBResult:
    """Final GCN on the imported embeddings over the current graph."""
    out = _out_dir(config, out_dir)
    stage = "load"
    try:
        state = load_state(out)
        labels = data.labels if data is not None else load_dataset(config).labels
        graph = graph or knn.load_graph(out / state["graph"])
        split = split or _load_split(out, state)
        if E.n_nodes != labels.n_nodes or graph.n_nodes != labels.n_nodes:
            raise ContractError(f"embeddings ({E.n_nodes}), graph ({graph.n_nodes}) and labels "
                                f"({labels.n_nodes}) disagree on node count")
        stage = "classifier"
        report = RunReport.for_config(config)
        A = knn.symmetrize(graph)
        res = gcn.train_gcn(E.values, A, labels, split, config.hyper)
        A_hat = gcn.normalize_adjacency(A)
        pred, conf = gcn.predict(res.params, E.values, A_hat)
        acc = (gcn.evaluate_accuracy(res.params, E.values, A_hat, labels, split.test_idx)
               if len(split.test_idx) else None)
        gcn.save_checkpoint(res.params, out / "stage_b.ckpt")
        unl = split.unlabeled_idx(labels.n_nodes)
        gcn.save_pseudo_labels(out / "final_labels.tsv", labels, split,
                               gcn.PseudoLabels(unl, pred[unl], conf[unl]))
        report.add("classifier", embedding_dim=E.dim, graph_k=graph.k, graph_metric=graph.metric,
                   iteration=state.get("iteration", 0),
                   final_loss=res.loss_history[-1] if res.loss_history else None,
                   test_accuracy=acc)
    except SFGLError as exc:
        raise StageError(stage, exc) from exc
    report.save(out / "report_stage_b.json")
    return StageBResult(report, pred, acc, res.params)


@dataclass
class IterationResult:
    graph: knn.DirectedKnnGraph
    pseudo: gcn.PseudoLabels
    export_path: Path
    report: RunReport


def run_iteration(config: PipelineConfig, E_prev: EmbeddingMatrix, data: Dataset | None = None,
                  out_dir=None) -> IterationResult:
    """Rebuild the graph on the latest embeddings and refresh the pseudo-labels."""
    out = _out_dir(config, out_dir)
    stage = "load"
    try:
        state = load_state(out)
        labels = data.labels if data is not None else load_dataset(config).labels
        split = _load_split(out, state)
        if E_prev.n_nodes != labels.n_nodes:
            raise ContractError(f"embeddings have {E_prev.n_nodes} rows, dataset has {labels.n_nodes}")
        t = int(state.get("iteration", 0)) + 1
        report = RunReport.for_config(config)

        stage = "knn"
        # dense embeddings reuse the sparse path
        G = knn.build_knn_graph(SparseFeatureMatrix.from_dense(E_prev.values), config.k, config.metric)
        gname = f"graph_iter{t}.edges"
        knn.save_graph(G, out / gname)
        report.add(f"iteration-{t}-graph", **graph_stats(G))

        stage = "pseudo-labeler"
        A = knn.symmetrize(G)
        res = gcn.train_gcn(E_prev.values, A, labels, split, config.hyper)
        pl = gcn.pseudo_label(res.params, E_prev.values, gcn.normalize_adjacency(A), split)
        gcn.save_checkpoint(res.params, out / f"stage_a_iter{t}.ckpt")
        gcn.save_pseudo_labels(out / f"pseudo_labels_iter{t}.tsv", labels, split, pl)
        report.add(f"iteration-{t}-pseudo-labeler", iteration=t,
                   pseudo_label_accuracy=_pseudo_accuracy(labels, pl))

        stage = "export"
        export = out / f"finetune_export_iter{t}.tsv"
        write_finetune_export(export, labels, split, pl)
    except SFGLError as exc:
        raise StageError(stage, exc) from exc
    report.save(out / f"report_iter{t}.json")
    trace = state.get("trace", []) + [{"iteration": t, "graph": gname, "export": export.name}]
    _save_state(out, {**state, "graph": gname, "iteration": t, "export": export.name,
                      "feature_source": "embeddings", "trace": trace})
    return IterationResult(G, pl, export, report)


def identity_finetuner(data: Dataset, path) -> EmbeddingMatrix:
    """Stand-in for the external LM: embeddings are the shallow features."""
    E = EmbeddingMatrix(data.F.to_dense())
    export_embeddings(E, path)
    return E


def run_self_contained(config: PipelineConfig, data: Dataset | None = None, out_dir=None) -> RunReport:
    """Stage A, stage B and any iterations with embeddings := shallow features."""
    data = data or load_dataset(config)
    a = run_stage_a(config, data, out_dir)
    E = EmbeddingMatrix(data.F.to_dense())
    b = run_stage_b(config, E, a.graph, data, out_dir, a.split)
    report = RunReport.for_config(config)
    report.stages = a.report.stages + b.report.stages
    for _ in range(config.iterations):
        it = run_iteration(config, E, data, out_dir)
        b = run_stage_b(config, E, it.graph, data, out_dir, a.split)
        report.stages += it.report.stages + b.report.stages
    report.timestamps = {**a.report.timestamps, **b.report.timestamps}
    report.save(_out_dir(config, out_dir) / "report.json")
    return report


def run_real_graph_comparison(config: PipelineConfig, edge_list_path=None, data: Dataset | None = None,
                              out_dir=None) -> RunReport:
    """Same GCN trained on the supplied real graph and on KNN graphs for each k."""
    edge_list_path = edge_list_path or config.edges
    if not edge_list_path:
        raise ConfigError("compare-real needs an edge list")
    out = _out_dir(config, out_dir)
    data = data or load_dataset(config)
    real = load_edge_list(edge_list_path, data.n_nodes)
    n = data.n_nodes
    R = sp.csr_matrix((np.ones(len(real)), (real[:, 0], real[:, 1])), shape=(n, n))
    graphs = {"real": knn.symmetrize(R)}
    for k in config.compare_ks:
        graphs[f"knn-k{k}"] = knn.symmetrize(knn.build_knn_graph(data.F, k, config.metric))

    seeds = config.seeds or (config.seed,)
    report = RunReport.for_config(config)
    rows = []
    for name, A in graphs.items():
        A_hat = gcn.normalize_adjacency(A)
        accs = []
        for s in seeds:
            split = make_split(data.labels, config.budget, config.strategy, s, config.n_val)
            hyper = gcn.GcnHyper(config.hidden, config.learning_rate, config.dropout,
                                 config.weight_decay, config.epochs, s)
            res = gcn.train_gcn(data.F, A_hat, data.labels, split, hyper)
            accs.append(gcn.evaluate_accuracy(res.params, data.F, A_hat, data.labels, split.test_idx))
        rows.append({"graph": name, "n_undirected_edges": int(A.nnz // 2), "accuracies": accs,
                     "mean": float(np.mean(accs)), "std": float(np.std(accs))})
    report.add("compare-real", seeds=list(seeds), rows=rows)
    report.save(out / "report_compare_real.json")
    return report
