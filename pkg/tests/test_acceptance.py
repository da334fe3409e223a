"""Acceptance criteria, one check per criterion.

Each check returns ``(passed, detail)``; the pytest wrapper prints a
``CRITERION n: PASS|FAIL|BLOCKED`` line and the conftest hook repeats the lines
in the terminal summary. Run ``python3 tests/test_acceptance.py`` for the
lines alone.

Criteria 4, 5 and 7 need the Cora citation network in LINQS layout
(``cora.content`` and ``cora.cites``) under ``$SFGL_CORA_DIR``; without it
they are reported as BLOCKED rather than run on a substitute.
"""

import contextlib
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from scipy import stats

sys.path.insert(0, str(Path(__file__).parent))

from sfgl import gcn, knn, scalefree  # noqa: E402
from sfgl.cli import main as cli_main  # noqa: E402
from sfgl.dataset import (  # noqa: E402
    LabelTable, SparseFeatureMatrix, Split, load_linqs, make_split, save_features, save_labels,
)
from sfgl.pipeline import (  # noqa: E402
    Dataset, EmbeddingMatrix, PipelineConfig, export_embeddings, identity_finetuner,
    import_embeddings, read_finetune_export, run_iteration, run_self_contained, run_stage_a,
    run_stage_b,
)

from conftest import clustered_features  # noqa: E402


class Blocked(Exception):
    pass


def timed(limit):
    def wrap(fn):
        def run():
            t0 = time.perf_counter()
            ok, detail = fn()
            dt = time.perf_counter() - t0
            if limit is not None and dt >= limit:
                return False, f"{detail}; runtime {dt:.1f}s exceeds {limit}s"
            return ok, f"{detail}; {dt:.1f}s"
        run.__name__ = fn.__name__
        return run
    return wrap


def cora():
    root = os.environ.get("SFGL_CORA_DIR")
    if not root:
        raise Blocked("Cora not available: set SFGL_CORA_DIR to a directory with cora.content and cora.cites")
    root = Path(root)
    content, cites = root / "cora.content", root / "cora.cites"
    if not content.exists():
        raise Blocked(f"{content} not found")
    return load_linqs(content, cites if cites.exists() else None)


# oracles

def oracle_scores(D, metric):
    """Pairwise similarity by direct broadcasting, independent of the library path."""
    if metric == "cosine":
        sq = np.einsum("ij,ij->i", D, D)
        dots = np.einsum("ik,jk->ij", D, D)
        denom = np.sqrt(np.outer(sq, sq))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom == 0, 0.0, dots / np.where(denom == 0, 1.0, denom))
    diff = D[:, None, :] - D[None, :, :]
    if metric == "euclidean":
        return -np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return -np.abs(diff).sum(axis=2)


def snap(x, bits=40):
    """Round to ``bits`` mantissa bits so rounding noise in either scorer cannot split a tie."""
    m, e = np.frexp(x)
    return np.ldexp(np.round(m * 2.0 ** bits), e - bits)


def oracle_knn(D, k, metric):
    S = snap(oracle_scores(D, metric))
    n = len(D)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        cand = np.array([j for j in range(n) if j != i])
        order = np.lexsort((cand, -S[i, cand]))  # score descending, then index ascending
        out[i] = np.sort(cand[order[:k]])
    return out


def oracle_degrees(adj):
    """In-degree, reciprocity and undirected edge count from a Python set of arcs."""
    n = len(adj)
    arcs = {(i, int(j)) for i in range(n) for j in adj[i]}
    undirected = {(min(a, b), max(a, b)) for a, b in arcs}
    nonrec = np.zeros(n, dtype=np.int64)
    for a, b in arcs:
        if (b, a) not in arcs:
            nonrec[b] += 1
    return nonrec, len(undirected)


def zipf_tail(alpha, theta_min, n, rng):
    """Discrete power law on {theta_min, ...} by rejection from scipy's zipf."""
    keep, total = [], 0
    while total < n:
        x = stats.zipf.rvs(alpha, size=4 * n, random_state=rng)
        x = x[x >= theta_min]
        keep.append(x)
        total += len(x)
    return np.concatenate(keep)[:n]


def dense_loss(arrays, A, X, y, idx, wd):
    W1, b1, W2, b2 = (arrays[k] for k in ("W1", "b1", "W2", "b2"))
    H = np.maximum(A @ X @ W1 + b1, 0)
    L = A @ H @ W2 + b2
    L = L - L.max(axis=1, keepdims=True)
    logp = L - np.log(np.exp(L).sum(axis=1, keepdims=True))
    return -logp[idx, y[idx]].mean() + 0.5 * wd * ((W1 ** 2).sum() + (W2 ** 2).sum())


def gaussian_classes(n, C, dim, separation, rng):
    """Isotropic unit-variance classes whose means sit ``separation`` apart pairwise."""
    y = np.repeat(np.arange(C), n // C)
    means = np.zeros((C, dim))
    means[np.arange(C), np.arange(C)] = separation / math.sqrt(2)
    return means[y] + rng.normal(size=(n, dim)), y


# criteria

@timed(30)
def criterion_1():
    rng = np.random.default_rng(1)
    bad = []
    for t in range(100):
        n, d, k = int(rng.integers(10, 501)), int(rng.integers(2, 51)), int(rng.integers(1, 11))
        metric = knn.METRICS[t % 3]
        M = sp.random(n, d, density=float(rng.uniform(0.05, 0.6)), random_state=rng, format="csr")
        if t % 2:
            M.data = rng.integers(1, 4, size=M.nnz).astype(float)
        G = knn.build_knn_graph(SparseFeatureMatrix.from_scipy(M), k, metric)
        rep = knn.degree_report(G)
        nonrec, E = oracle_degrees(G.out_adj)
        ok = (int(nonrec.sum()) == 2 * E - k * n and E <= k * n
              and int(rep.nonreciprocal_in.sum()) == 2 * rep.n_undirected_edges - k * n
              and rep.n_undirected_edges == E and np.array_equal(rep.nonreciprocal_in, nonrec))
        if not ok:
            bad.append(t)
    return not bad, f"100 datasets, identity violated on {len(bad)}"


@timed(60)
def criterion_2():
    rng = np.random.default_rng(2)
    bad = []
    for t in range(200):
        n = int(rng.integers(2, 201))
        d = int(rng.integers(1, 21))
        k = int(rng.integers(1, min(n - 1, 12) + 1))
        metric = knn.METRICS[t % 3]
        M = sp.random(n, d, density=float(rng.uniform(0.1, 0.9)), random_state=rng, format="csr")
        if t % 4 < 2:  # small integers produce exact ties
            M.data = rng.integers(1, 4, size=M.nnz).astype(float)
        F = SparseFeatureMatrix.from_scipy(M)
        if not np.array_equal(knn.build_knn_graph(F, k, metric).out_adj, oracle_knn(F.to_dense(), k, metric)):
            bad.append(t)
    return not bad, f"200 instances, {len(bad)} mismatches"


@timed(120)
def criterion_3():
    within, preferred, runs, worst = 0, 0, 0, 0.0
    for alpha in (2.2, 2.8, 3.5):
        for theta_min in (1, 3):
            for seed in range(5):
                x = zipf_tail(alpha, theta_min, 100_000, np.random.default_rng(1000 * seed + int(10 * alpha)))
                pl = scalefree.fit_power_law(x)
                ex = scalefree.fit_exponential(x, pl.theta_min)
                runs += 1
                err = abs(pl.alpha - alpha)
                worst = max(worst, err)
                within += err <= 0.05
                preferred += scalefree.compare_fits(pl, ex).preferred == "powerlaw"
    ok = within >= 0.95 * runs and preferred == runs
    return ok, f"{within}/{runs} within 0.05 (worst {worst:.4f}), power law preferred {preferred}/{runs}"


@timed(120)
def criterion_4():
    F, _, _, _ = cora()
    deg = knn.degree_report(knn.build_knn_graph(F, 5, "cosine")).in_degree
    pl = scalefree.fit_power_law(deg)
    ex = scalefree.fit_exponential(deg, pl.theta_min)
    ok = 2.8 <= pl.alpha <= 3.8 and pl.log_likelihood > ex.log_likelihood
    return ok, (f"alpha={pl.alpha:.3f} theta_min={pl.theta_min} "
                f"ll_powerlaw={pl.log_likelihood:.1f} ll_exponential={ex.log_likelihood:.1f}")


@timed(120)
def criterion_5():
    F, _, _, _ = cora()
    deg = knn.degree_report(knn.build_knn_graph(F, 5, "euclidean")).in_degree
    zeros = int(np.count_nonzero(deg == 0))
    return 1600 <= zeros <= 2500, f"zero in-degree nodes={zeros} of {len(deg)}"


@timed(30)
def criterion_6():
    worst = 0.0
    step = 1e-5
    for t in range(10):
        rng = np.random.default_rng(60 + t)
        n, d, C, h = int(rng.integers(4, 17)), int(rng.integers(2, 7)), int(rng.integers(2, 5)), 5
        X = rng.normal(size=(n, d))
        R = np.triu((rng.random((n, n)) < 0.3).astype(float), 1)
        A_hat = gcn.normalize_adjacency(sp.csr_matrix(R + R.T))
        y = rng.integers(0, C, size=n)
        labels = LabelTable(n, C, y)
        idx = np.sort(rng.choice(n, size=max(1, n // 2), replace=False))
        split = Split(idx, np.setdiff1d(np.arange(n), idx), seed=t)
        hyper = gcn.GcnHyper(hidden=h, dropout=0.0, weight_decay=5e-4, seed=t)
        p = gcn.init_params(d, C, hyper)
        p = p.with_arrays({"b1": rng.normal(size=h) * 0.1, "b2": rng.normal(size=C) * 0.1})
        _, grads = gcn.loss_and_grads(p, A_hat, X, split, labels)
        A = A_hat.matrix.toarray()
        base = p.arrays()
        for name, arr in base.items():
            for pos in np.ndindex(arr.shape):
                vals = []
                for sign in (1.0, -1.0):
                    trial = {k: v.copy() for k, v in base.items()}
                    trial[name][pos] += sign * step
                    vals.append(dense_loss(trial, A, X, y, idx, hyper.weight_decay))
                fd = (vals[0] - vals[1]) / (2 * step)
                ga = float(grads[name][pos])
                worst = max(worst, abs(ga - fd) / max(abs(ga), abs(fd), 1e-8))
    return worst < 1e-4, f"max relative error {worst:.2e} over 10 instances"


@timed(300)
def criterion_7():
    F, labels, _, _ = cora()
    A = knn.symmetrize(knn.build_knn_graph(F, 25, "cosine"))
    A_hat = gcn.normalize_adjacency(A)
    accs = []
    for seed in range(5):
        split = make_split(labels, 140, "per-class-balanced", seed)
        res = gcn.train_gcn(F, A_hat, labels, split, gcn.GcnHyper(seed=seed))
        accs.append(gcn.evaluate_accuracy(res.params, F, A_hat, labels, split.test_idx))
    mean = float(np.mean(accs))
    return 0.55 <= mean <= 0.66, f"mean test accuracy {mean:.4f} +/- {np.std(accs):.4f} over 5 seeds"


@timed(120)
def criterion_8():
    n, m = 50_000, 2
    g = scalefree.generate_ba_graph(n, m, seed=0)
    fit = scalefree.fit_power_law(g.degrees())
    expected = math.comb(m + 1, 2) + m * (n - m - 1)
    ok = 2.5 <= fit.alpha <= 3.5 and len(g.edges) == expected
    return ok, f"alpha={fit.alpha:.3f} theta_min={fit.theta_min} edges={len(g.edges)} (expected {expected})"


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if k not in ("timestamp", "timestamps")}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def _artifact(path: Path) -> bytes:
    if path.suffix == ".json":
        return json.dumps(_strip(json.loads(path.read_text())), sort_keys=True).encode()
    return path.read_bytes()


@timed(60)
def criterion_9():
    F, labels = clustered_features(15, 3, dim=30, seed=9)
    data = Dataset(F, labels)
    problems = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for seed in range(3):
            cfg = PipelineConfig(k=4, budget=6, hidden=16, learning_rate=0.01, epochs=60, seed=seed,
                                 out=str(tmp / "unused"))
            sc, staged = tmp / f"sc{seed}", tmp / f"staged{seed}"
            run_self_contained(cfg, data, sc)
            a = run_stage_a(cfg, data, staged)
            identity_finetuner(data, staged / "embeddings.emb")
            E = import_embeddings(staged / "embeddings.emb", data.n_nodes)
            run_stage_b(cfg, E, data=data, out_dir=staged)
            for name in ("report_stage_a.json", "report_stage_b.json", "finetune_export.tsv",
                         "graph.edges", "stage_a.ckpt", "stage_b.ckpt", "final_labels.tsv"):
                if _artifact(sc / name) != _artifact(staged / name):
                    problems.append(f"seed {seed}: {name} differs")
            ft = read_finetune_export(a.export_path)
            m, n = a.split.m, data.n_nodes - a.split.m
            if (ft["is_pseudo"] == 0).sum() != m or (ft["is_pseudo"] == 1).sum() != n:
                problems.append(f"seed {seed}: export rows {len(ft['node_id'])} != m + n")
    return not problems, "; ".join(problems) or "3 seeds byte-identical; export has m true + n pseudo rows"


@timed(60)
def criterion_10():
    lines, ok = [], True
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        E, y = gaussian_classes(600, 3, 16, 6.0, rng)
        shallow, _ = gaussian_classes(600, 3, 16, 6.0, rng)  # independent noisy view for stage A
        data = Dataset(SparseFeatureMatrix.from_dense(shallow), LabelTable(600, 3, y))
        cfg = PipelineConfig(k=10, budget=30, seed=seed)
        with tempfile.TemporaryDirectory() as tmp:
            a = run_stage_a(cfg, data, tmp)
            before = a.report.stage("pseudo-labeler")["pseudo_label_accuracy"]
            b = run_stage_b(cfg, EmbeddingMatrix(E), data=data, out_dir=tmp)
            it = run_iteration(cfg, EmbeddingMatrix(E), data, tmp)
            after = it.report.stages[-1]["pseudo_label_accuracy"]
        ok &= b.accuracy >= 0.95 and after >= before - 0.02
        lines.append(f"seed {seed}: final={b.accuracy:.4f} pseudo {before:.4f}->{after:.4f}")
    return ok, ", ".join(lines)


@contextlib.contextmanager
def _cwd(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


def _subcommand_runs():
    """Every subcommand, with relative paths so two workspaces see identical arguments."""
    common = ["--features", "f.coo", "--graph", "g/graph.edges", "--labels", "labels.txt"]
    cfg = ["--config", "run.cfg"]
    return [
        ["build-graph", "--features", "f.coo", "--k", "3", "--out", "g"],
        ["degrees", "--graph", "g/graph.edges", "--out", "d"],
        ["fit", "--graph", "g/graph.edges", "--model", "both", "--out", "fit"],
        ["ba-gen", "--n", "500", "--m", "2", "--seed", "3", "--out", "ba"],
        ["train", *common, "--budget", "6", "--lr", "0.01", "--epochs", "50", "--out", "train"],
        ["pseudo-label", "--checkpoint", "train/model.ckpt", *common, "--split", "train/split.json",
         "--out", "pl"],
        ["export-finetune", "--pseudo-labels", "pl/pseudo_labels.tsv", "--out", "ft"],
        ["import-embeddings", "--embeddings", "e.emb", "--out", "emb"],
        ["classify", "--embeddings", "e.emb", "--graph", "g/graph.edges", "--labels", "labels.txt",
         "--split", "train/split.json", "--lr", "0.01", "--epochs", "50", "--out", "cls"],
        ["run", *cfg, "--stage", "a"],
        ["run", *cfg, "--stage", "b", "--embeddings", "e.emb"],
        ["run", *cfg, "--stage", "iterate", "--embeddings", "e.emb"],
        ["run", *cfg, "--stage", "self-contained", "--out", "sc"],
        ["compare-real", *cfg, "--edges", "edges.txt", "--out", "cmp"],
    ]


def _workspace(root: Path):
    F, labels = clustered_features(15, 3, dim=30, seed=11)
    save_features(F, root / "f.coo")
    save_labels(labels, root / "labels.txt")
    export_embeddings(EmbeddingMatrix(F.to_dense() + 0.5), root / "e.emb")
    (root / "edges.txt").write_text("".join(f"{i} {i + 1}\n" for i in range(44)))
    (root / "run.cfg").write_text(
        "features = f.coo\nlabels = labels.txt\nk = 4\nbudget = 6\nhidden = 16\n"
        "learning_rate = 0.01\nepochs = 50\nseeds = 0,1\ncompare_ks = 3\nout = pipe\n")


@timed(None)
def criterion_11():
    runs = _subcommand_runs()
    snapshots = []
    with tempfile.TemporaryDirectory() as tmp:
        for rep in range(2):
            root = Path(tmp) / f"w{rep}"
            root.mkdir()
            _workspace(root)
            with _cwd(root):
                for argv in runs:
                    code = cli_main(argv)
                    if code != 0:
                        return False, f"{argv[0]} exited {code}"
            snapshots.append({str(p.relative_to(root)): _artifact(p)
                              for p in sorted(root.rglob("*")) if p.is_file()})
    a, b = snapshots
    differing = sorted(k for k in a if a[k] != b.get(k)) + sorted(set(b) - set(a))
    commands = sorted({argv[0] for argv in runs})
    return not differing, (f"{len(commands)} subcommands, {len(a)} artifacts compared"
                           + (f"; differing: {differing}" if differing else ""))


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


def evaluate(i):
    """Run one criterion and format its summary line."""
    try:
        ok, detail = CRITERIA[i]()
        status = "PASS" if ok else "FAIL"
    except Blocked as exc:
        status, detail = "BLOCKED", str(exc)
    return status, f"CRITERION {i}: {status} - {detail}"


@pytest.mark.acceptance
@pytest.mark.parametrize("i", sorted(CRITERIA))
def test_criterion(i, acceptance_log):
    status, line = evaluate(i)
    print(line)
    acceptance_log.append(line)
    if status == "BLOCKED":
        pytest.skip(line)
    assert status == "PASS", line


if __name__ == "__main__":
    for i in sorted(CRITERIA):
        print(evaluate(i)[1], flush=True)
