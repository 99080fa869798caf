"""Experiment harness: cross-validation, repeated trials, grid search and projections."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import maximum_flow
from joblib import Parallel, delayed
from sklearn.base import clone
from sklearn.manifold import TSNE
from sklearn.metrics import confusion_matrix as _sk_confusion

from .energy import count_ops, count_training_ops
from .exceptions import ConfigurationError, EchoStateError
from .readout import GraphConvClassifier, LinearReadoutClassifier
from .validation import check_graphs, check_labels, check_matrix, check_positive_int

logger = logging.getLogger(__name__)


def derive_seeds(seed, n, stream=0):
    """``n`` independent 63-bit integer seeds from ``(seed, stream)``."""
    children = np.random.SeedSequence([int(seed), int(stream)]).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def stratified_folds(labels, k, seed=0):
    """Test-index arrays for ``k`` stratified folds.

    Fold sizes differ by at most one. The number of samples of class ``c`` in
    fold ``f`` is the floor or ceiling of ``n_c * size_f / N``, so every fold
    is within one sample of the global class proportions; ``k`` may be as
    large as the number of samples. Which samples land in which fold is
    shuffled per class by ``seed``.
    """
    y = check_labels(labels)
    k = check_positive_int(k, "k", minimum=2)
    n = y.shape[0]
    if k > n:
        raise ConfigurationError(f"k={k} exceeds the number of samples {n}")
    classes = np.unique(y)
    counts = _fold_counts(np.array([np.sum(y == c) for c in classes]), k)
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for row, c in enumerate(classes):
        idx = rng.permutation(np.flatnonzero(y == c))
        for f, part in enumerate(np.split(idx, np.cumsum(counts[row])[:-1])):
            folds[f].append(part)
    return [np.sort(np.concatenate(parts)) for parts in folds]


def _fold_counts(class_sizes, k):
    """Integer class-by-fold table rounding ``n_c * size_f / N`` with exact margins.

    Entries are floors plus a 0/1 correction chosen by a max-flow from classes
    to folds; a rounding that keeps both margins always exists for a table
    whose row and column sums are integers.
    """
    n = int(class_sizes.sum())
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    prod = np.outer(class_sizes, sizes)
    table = prod // n
    frac = (prod % n) > 0
    row_need = class_sizes - table.sum(axis=1)
    col_need = sizes - table.sum(axis=0)
    C = class_sizes.shape[0]
    source, sink = 0, C + k + 1
    cap = np.zeros((C + k + 2, C + k + 2), dtype=np.int32)
    cap[source, 1 : C + 1] = row_need
    cap[1 : C + 1, C + 1 : C + k + 1] = frac
    cap[C + 1 : C + k + 1, sink] = col_need
    flow = maximum_flow(sparse.csr_matrix(cap), source, sink)
    if flow.flow_value != row_need.sum():
        raise ConfigurationError("could not balance stratified folds")
    extra = flow.flow.toarray()[1 : C + 1, C + 1 : C + k + 1]
    return table + extra


def stratified_split(labels, fractions=(0.6, 0.2, 0.2), seed=0):
    """Disjoint train/validation/test index arrays with per-class proportions."""
    y = check_labels(labels)
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise ConfigurationError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        n_train = int(round(fr[0] * idx.size))
        n_val = int(round(fr[1] * idx.size))
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train : n_train + n_val])
        parts[2].append(idx[n_train + n_val :])
    return tuple(np.sort(np.concatenate(p)).astype(np.int64) for p in parts)


def confusion_matrix(y_true, y_pred, n_classes):
    """Counts with true classes on rows and predictions on columns."""
    return _sk_confusion(y_true, y_pred, labels=np.arange(n_classes)).astype(np.int64)


def row_normalize(cm):
    cm = np.asarray(cm, dtype=np.float64)
    sums = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, sums, out=np.zeros_like(cm), where=sums > 0)


@dataclass
class CvReport:
    """Cross-validation outcome.

    ``confusion`` is the fold-averaged confusion matrix and
    ``confusion_normalized`` its row-normalized form. ``accuracy`` is pooled
    over all held-out samples (trace over total), ``mean_accuracy`` is the
    arithmetic mean of the per-fold accuracies.
    """

    fold_accuracies: list
    fold_confusions: list
    n_classes: int
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    ops: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    @property
    def k(self):
        return len(self.fold_accuracies)

    @property
    def mean_accuracy(self):
        return float(np.mean(self.fold_accuracies))

    @property
    def std_accuracy(self):
        return float(np.std(self.fold_accuracies))

    @property
    def confusion_sum(self):
        return np.sum(np.asarray(self.fold_confusions, dtype=np.int64), axis=0)

    @property
    def confusion(self):
        return np.mean(np.asarray(self.fold_confusions, dtype=np.float64), axis=0)

    @property
    def confusion_normalized(self):
        return row_normalize(self.confusion)

    @property
    def accuracy(self):
        cm = self.confusion_sum
        return float(np.trace(cm) / cm.sum())

    def to_dict(self):
        return {
            "kind": "cross_validation",
            "k": self.k,
            "n_classes": self.n_classes,
            "class_names": list(self.class_names),
            "fold_accuracies": [float(a) for a in self.fold_accuracies],
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "pooled_accuracy": self.accuracy,
            "fold_confusions": [np.asarray(c).tolist() for c in self.fold_confusions],
            "confusion_mean": self.confusion.tolist(),
            "confusion_normalized": self.confusion_normalized.tolist(),
            "config": self.config,
            "seeds": self.seeds,
            "ops": self.ops,
            "warnings": list(self.warnings),
        }

    def to_text(self):
        rows = [("fold", "accuracy")]
        rows += [(str(i), f"{a:.4f}") for i, a in enumerate(self.fold_accuracies)]
        rows.append(("mean", f"{self.mean_accuracy:.4f}"))
        return format_table(rows) + "\n\n" + format_confusion(self.confusion_normalized, self.class_names)


@dataclass
class TrialReport:
    """Repeated node-classification runs with fresh arrays and readout initialization."""

    test_accuracies: list
    val_accuracies: list
    confusions: list
    n_classes: int
    split: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    ops: dict = field(default_factory=dict)
    final_losses: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    @property
    def mean_accuracy(self):
        return float(np.mean(self.test_accuracies))

    @property
    def mean_val_accuracy(self):
        return float(np.mean(self.val_accuracies)) if self.val_accuracies else float("nan")

    @property
    def confusion(self):
        return np.mean(np.asarray(self.confusions, dtype=np.float64), axis=0)

    @property
    def confusion_normalized(self):
        return row_normalize(self.confusion)

    def to_dict(self):
        return {
            "kind": "repeated_trials",
            "trials": len(self.test_accuracies),
            "n_classes": self.n_classes,
            "class_names": list(self.class_names),
            "test_accuracies": [float(a) for a in self.test_accuracies],
            "val_accuracies": [float(a) for a in self.val_accuracies],
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": float(np.std(self.test_accuracies)),
            "mean_val_accuracy": self.mean_val_accuracy,
            "confusions": [np.asarray(c).tolist() for c in self.confusions],
            "confusion_mean": self.confusion.tolist(),
            "confusion_normalized": self.confusion_normalized.tolist(),
            "final_losses": [float(v) for v in self.final_losses],
            "split": self.split,
            "config": self.config,
            "seeds": list(self.seeds),
            "ops": self.ops,
            "warnings": list(self.warnings),
        }

    def to_text(self):
        rows = [("trial", "seed", "val", "test")]
        for i, (s, v, a) in enumerate(zip(self.seeds, self.val_accuracies, self.test_accuracies)):
            rows.append((str(i), str(s), f"{v:.4f}", f"{a:.4f}"))
        rows.append(("mean", "", f"{self.mean_val_accuracy:.4f}", f"{self.mean_accuracy:.4f}"))
        return format_table(rows) + "\n\n" + format_confusion(self.confusion_normalized, self.class_names)


def _embedder_for(model_factory, array_seed, noise_seed):
    if hasattr(model_factory, "get_params"):
        params = {"array_seed": array_seed}
        if model_factory.get_params().get("noise_seed") is not None:
            params["noise_seed"] = noise_seed
        return clone(model_factory).set_params(**params)
    return model_factory(array_seed, noise_seed)


def _degree_warning(embedder):
    bound = getattr(embedder, "degree_bound_", None)
    if bound is not None and bound >= 1.0:
        return f"rho*max_degree={bound:.4g} >= 1 (fading memory not guaranteed by the degree-aware bound)"
    return None


def _run_fold(model_factory, readout, graphs, y, test_idx, n_classes, array_seed, noise_seed):
    emb = _embedder_for(model_factory, array_seed, noise_seed)
    if "n_jobs" in emb.get_params():
        emb.set_params(n_jobs=1)
    G = emb.fit(graphs).transform(graphs)
    train_mask = np.ones(len(graphs), dtype=bool)
    train_mask[test_idx] = False
    notes = []
    missing = sorted(set(range(n_classes)) - set(np.unique(y[train_mask]).tolist()))
    if missing:
        notes.append(f"classes {missing} absent from a training fold")
    clf = clone(readout).set_params(n_classes=n_classes)
    clf.fit(G[train_mask], y[train_mask])
    pred = clf.predict(G[test_idx])
    cm = confusion_matrix(y[test_idx], pred, n_classes)
    warn = _degree_warning(emb)
    if warn:
        notes.append(warn)
    return float(np.mean(pred == y[test_idx])), cm, notes, emb


def kfold_cv(dataset, model_factory, k=10, seed=0, readout=None, n_jobs=1):
    """Stratified k-fold cross-validation of embedder plus linear readout.

    ``model_factory`` is an unfitted :class:`~esgnn.model.ESGNNEmbedder`
    (cloned per fold with a fresh ``array_seed``) or a callable
    ``(array_seed, noise_seed) -> embedder``. Every graph is embedded with the
    fold's arrays; the readout is fitted on the training folds only.
    """
    graphs = check_graphs(dataset)
    y = np.array([g.graph_label for g in graphs], dtype=np.int64)
    n_classes = getattr(dataset, "num_classes", int(y.max()) + 1)
    readout = LinearReadoutClassifier() if readout is None else readout
    folds = stratified_folds(y, k, seed)
    array_seeds = derive_seeds(seed, k, stream=1)
    noise_seeds = derive_seeds(seed, k, stream=2)
    tasks = [
        delayed(_run_fold)(model_factory, readout, graphs, y, folds[f], n_classes, array_seeds[f], noise_seeds[f])
        for f in range(k)
    ]
    if n_jobs == 1:
        results = [fn(*a, **kw) for fn, a, kw in tasks]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(tasks)
    notes = []
    for f, (_, _, fold_notes, _) in enumerate(results):
        notes += [f"fold {f}: {m}" for m in fold_notes]
    for m in notes:
        if "absent" in m:
            warnings.warn(m, RuntimeWarning, stacklevel=2)
    first = results[0][3]
    config = _embedder_config(first)
    config["readout"] = {"kind": "linear", **readout.get_params()}
    ops = {}
    if hasattr(first, "make_config"):
        cfg = first.make_config()
        n_train = len(graphs) - int(np.mean([f.size for f in folds]))
        ops = {
            "forward": count_ops(graphs, cfg, "linear", n_classes).to_dict(),
            "training": count_training_ops(graphs, cfg, "linear", n_classes, n_train=n_train).to_dict(),
            "instrumented_macs_per_fold": first.stats_.macs,
        }
    return CvReport(
        fold_accuracies=[r[0] for r in results],
        fold_confusions=[r[1] for r in results],
        n_classes=n_classes,
        config=config,
        seeds={"split": seed, "array": array_seeds, "noise": noise_seeds},
        ops=ops,
        warnings=notes,
        class_names=[str(c) for c in getattr(dataset, "class_names", ())],
    )


def _embedder_config(emb):
    if not hasattr(emb, "get_params"):
        return {}
    params = {k: v for k, v in emb.get_params().items() if k not in ("array_seed", "noise_seed", "n_jobs")}
    if params.get("device") is not None:
        params["device"] = params["device"].to_dict()
    params["noise"] = emb.get_params().get("noise_seed") is not None
    return params


def _run_trial(model_factory, classifier, graph, y, split, n_classes, seed, noise_seed):
    train, val, test = split
    emb = _embedder_for(model_factory, seed, noise_seed).set_params(level="node")
    S = emb.fit(graph).transform(graph)
    clf = clone(classifier).set_params(seed=seed, n_classes=n_classes)
    clf.fit(S, y, graph=graph, train_mask=train)
    pred = clf.predict(S, graph=graph)
    val_acc = float(np.mean(pred[val] == y[val])) if val.size else float("nan")
    return (
        float(np.mean(pred[test] == y[test])),
        val_acc,
        confusion_matrix(y[test], pred[test], n_classes),
        clf.readout_.final_loss,
        emb,
    )


def repeated_trials(dataset, model_factory, trials=10, seeds=None, classifier=None,
                    fractions=(0.6, 0.2, 0.2), split_seed=0, n_jobs=1):
    """Node classification on one graph, repeated with fresh arrays and readout init.

    The stratified split is fixed by ``split_seed`` and shared by all trials;
    trial ``i`` uses ``seeds[i]`` for the arrays, the readout initialization
    and dropout.
    """
    graphs = check_graphs(dataset)
    if len(graphs) != 1:
        raise ConfigurationError("repeated_trials expects a dataset holding one graph")
    graph = graphs[0]
    if graph.node_labels is None:
        raise ConfigurationError("node classification needs node labels")
    trials = check_positive_int(trials, "trials")
    seeds = list(range(trials)) if seeds is None else [int(s) for s in seeds]
    if len(seeds) != trials:
        raise ConfigurationError(f"{len(seeds)} seeds for {trials} trials")
    y = graph.node_labels
    n_classes = getattr(dataset, "num_classes", int(y.max()) + 1)
    classifier = GraphConvClassifier() if classifier is None else classifier
    split = stratified_split(y, fractions, split_seed)
    noise_seeds = derive_seeds(split_seed, trials, stream=3)
    tasks = [
        delayed(_run_trial)(model_factory, classifier, graph, y, split, n_classes, seeds[i], noise_seeds[i])
        for i in range(trials)
    ]
    if n_jobs == 1:
        results = [fn(*a, **kw) for fn, a, kw in tasks]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(tasks)
    first = results[0][4]
    config = _embedder_config(first)
    config["readout"] = {"kind": "graphconv", **classifier.get_params()}
    ops = {}
    if hasattr(first, "make_config"):
        cfg = first.make_config()
        ops = {
            "forward": count_ops(graphs, cfg, "graphconv", n_classes).to_dict(),
            "training": count_training_ops(
                graphs, cfg, "graphconv", n_classes, epochs=classifier.get_params()["epochs"]
            ).to_dict(),
            "instrumented_macs_per_trial": first.stats_.macs,
        }
    notes = [w for w in (_degree_warning(r[4]) for r in results[:1]) if w]
    return TrialReport(
        test_accuracies=[r[0] for r in results],
        val_accuracies=[r[1] for r in results],
        confusions=[r[2] for r in results],
        n_classes=n_classes,
        split={
            "fractions": list(fractions),
            "seed": split_seed,
            "sizes": [int(s.size) for s in split],
            "stratified": True,
        },
        config=config,
        seeds=seeds,
        ops=ops,
        final_losses=[r[3] for r in results],
        warnings=notes,
        class_names=[str(c) for c in getattr(dataset, "class_names", ())],
    )


@dataclass
class GridResult:
    """Evaluated grid points sorted best-first, plus the points skipped as unstable."""

    ranked: list
    skipped: list

    @property
    def best(self):
        return self.ranked[0] if self.ranked else None

    def to_dict(self):
        return {"ranked": self.ranked, "skipped": self.skipped}


def expand_grid(grid):
    if not grid:
        raise ConfigurationError("grid must have at least one axis")
    keys = sorted(grid)
    for key in keys:
        if not list(grid[key]):
            raise ConfigurationError(f"grid axis {key!r} is empty")
    return [dict(zip(keys, vals)) for vals in itertools.product(*(list(grid[k]) for k in keys))]


def grid_search(dataset, model_factory, grid, k=10, seed=0, readout=None, n_jobs=1,
                task="graph", trials=1, classifier=None):
    """Exhaustive search over ``grid`` (parameter name -> values of the embedder).

    Graph tasks are scored by the k-fold CV mean accuracy, node tasks by the
    mean validation accuracy of ``trials`` repeated runs. Points whose arrays
    violate the echo-state condition are skipped and logged. Ties in score go
    to the configuration with fewer forward OPs.
    """
    ranked, skipped = [], []
    for params in expand_grid(grid):
        factory = clone(model_factory).set_params(**params)
        try:
            if task == "graph":
                report = kfold_cv(dataset, factory, k, seed, readout, n_jobs)
                score = report.mean_accuracy
            elif task == "node":
                report = repeated_trials(dataset, factory, trials, classifier=classifier,
                                         split_seed=seed, n_jobs=n_jobs)
                score = report.mean_val_accuracy
            else:
                raise ConfigurationError(f"task must be 'graph' or 'node', got {task!r}")
        except EchoStateError as exc:
            logger.warning("skipping %s: %s", params, exc)
            skipped.append({"params": _jsonable(params), "reason": str(exc)})
            continue
        ranked.append(
            {
                "params": _jsonable(params),
                "score": score,
                "mean_accuracy": report.mean_accuracy,
                "forward_ops": report.ops.get("forward", {}).get("forward", 0),
                "report": report.to_dict(),
            }
        )
    ranked.sort(key=lambda r: (-r["score"], r["forward_ops"]))
    return GridResult(ranked, skipped)


def _jsonable(params):
    return {k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in params.items()}


@dataclass
class Projection:
    coords: np.ndarray
    method: str
    degenerate: bool = False
    explained_variance: np.ndarray | None = None


def project_2d(embeddings, method="pca", seed=0, perplexity=30.0, max_iter=1000):
    """Two-dimensional coordinates for visual inspection.

    PCA centres the embeddings and projects on the top two right singular
    vectors; each component's sign is fixed so its largest-magnitude loading
    is positive. All-identical embeddings give zeros and ``degenerate=True``.
    tSNE uses the exact gradient (no Barnes-Hut) with PCA initialization.
    """
    E = check_matrix(embeddings, "embeddings")
    if E.shape[0] < 3:
        raise ConfigurationError("project_2d needs at least 3 points")
    if method == "pca":
        X = E - E.mean(axis=0)
        _, s, vt = np.linalg.svd(X, full_matrices=False)
        tol = max(X.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        if s.size == 0 or s[0] <= max(tol, 1e-300):
            return Projection(np.zeros((E.shape[0], 2)), "pca", True, np.zeros(2))
        comps = vt[:2]
        flip = np.sign(comps[np.arange(comps.shape[0]), np.argmax(np.abs(comps), axis=1)])
        comps = comps * flip[:, None]
        coords = X @ comps.T
        var = s**2 / max(E.shape[0] - 1, 1)
        coords[:, s[: coords.shape[1]] <= tol] = 0.0
        if coords.shape[1] < 2:
            coords = np.hstack([coords, np.zeros((E.shape[0], 2 - coords.shape[1]))])
        ev = np.zeros(2)
        ev[: min(2, var.size)] = var[:2]
        return Projection(coords, "pca", False, ev)
    if method == "tsne":
        tsne = TSNE(
            n_components=2,
            perplexity=min(perplexity, (E.shape[0] - 1) / 3.0),
            max_iter=max_iter,
            method="exact",
            init="pca",
            random_state=seed,
        )
        return Projection(tsne.fit_transform(E), "tsne")
    raise ConfigurationError(f"method must be 'pca' or 'tsne', got {method!r}")


def format_table(rows):
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


def format_confusion(cm, class_names=()):
    cm = np.asarray(cm, dtype=np.float64)
    names = list(class_names) or [str(i) for i in range(cm.shape[0])]
    rows = [("true\\pred", *names)]
    rows += [(names[i], *(f"{v:.3f}" for v in cm[i])) for i in range(cm.shape[0])]
    return format_table(rows)


def write_matrix_csv(path, matrix, header=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in np.asarray(matrix).tolist():
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return path


def write_report(report, out_dir, stem):
    """JSON, aligned text and confusion CSVs for a CvReport or TrialReport."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / f"{stem}.json",
        "text": out / f"{stem}.txt",
        "confusion": out / f"{stem}_confusion.csv",
        "confusion_normalized": out / f"{stem}_confusion_normalized.csv",
    }
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    paths["text"].write_text(report.to_text() + "\n")
    write_matrix_csv(paths["confusion"], report.confusion)
    write_matrix_csv(paths["confusion_normalized"], report.confusion_normalized)
    return paths
