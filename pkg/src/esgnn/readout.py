"""Trainable output layers.

Graph embeddings are classified by a linear layer fitted in closed form
(ridge regression on one-hot targets). Node embeddings are classified by a
single graph-convolution layer trained with momentum SGD.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, sparse
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import ConfigurationError, NumericalError, ShapeError
from .validation import check_in_range, check_labels, check_matrix, check_positive_int

READOUT_SCHEMA = "esgnn.readout/1"


def augment(E):
    """Append the bias column of ones."""
    return np.hstack([E, np.ones((E.shape[0], 1))])


def one_hot(labels, n_classes):
    Y = np.zeros((labels.shape[0], n_classes))
    Y[np.arange(labels.shape[0]), labels] = 1.0
    return Y


@dataclass(frozen=True, eq=False)
class LinearReadout:
    """Weights ``(h + 1, C)`` with the bias in the last row, plus fit diagnostics."""

    weights: np.ndarray
    ridge: float = 0.0
    condition_number: float = 1.0
    rank_deficient: bool = False
    ops: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or not np.all(np.isfinite(w)):
            raise ShapeError("readout weights must be a finite 2-D matrix")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_classes(self):
        return self.weights.shape[1]

    @property
    def n_weights(self):
        return self.weights.size

    def decision_function(self, E):
        E = check_matrix(E, "embeddings", n_cols=self.weights.shape[0] - 1)
        return augment(E) @ self.weights

    def objective(self, E, Y):
        """Regularized least-squares objective minimized by :func:`fit_linear`."""
        r = augment(E) @ self.weights - Y
        return float(np.sum(r * r) + self.ridge * np.sum(self.weights * self.weights))


def fit_linear(embeddings, labels, n_classes=None, ridge=1e-6):
    """Least-squares readout ``min ||[E|1] W - Y||^2 + ridge ||W||^2`` on one-hot ``Y``.

    ``ridge > 0`` solves the normal equations by Cholesky. ``ridge == 0``
    returns the minimum-norm solution (pseudoinverse) and reports the
    condition number of ``[E|1]``. ``ops`` tallies the floating-point work of
    the normal-equation path at 2 OPs per multiply-accumulate.
    """
    E = check_matrix(embeddings, "embeddings")
    n, h = E.shape
    if n < 1:
        raise ConfigurationError("fit_linear needs at least one sample")
    y = check_labels(labels, n_samples=n, n_classes=n_classes)
    C = int(n_classes) if n_classes is not None else int(y.max()) + 1
    ridge = check_in_range(ridge, "ridge", 0.0)
    A = augment(E)
    Y = one_hot(y, C)
    d = h + 1
    ops = {
        "gram": 2 * n * d * d,
        "rhs": 2 * n * d * C,
        "factor": (2 * d**3) // 3,
        "triangular_solves": 2 * d * d * C,
    }
    if ridge > 0:
        gram = A.T @ A + ridge * np.eye(d)
        factor = linalg.cho_factor(gram, lower=True, check_finite=False)
        W = linalg.cho_solve(factor, A.T @ Y, check_finite=False)
        s = linalg.svdvals(gram)
        cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
        deficient = False
    else:
        W, _, rank, s = linalg.lstsq(A, Y, check_finite=False)
        cond = float(s[0] / s[-1]) if s.size and s[-1] > 0 else float("inf")
        deficient = bool(rank < min(A.shape))
    return LinearReadout(W, ridge=ridge, condition_number=cond, rank_deficient=deficient, ops=ops)


def predict_linear(readout, embeddings):
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(readout.decision_function(embeddings), axis=1)


class LinearReadoutClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`fit_linear` / :func:`predict_linear`.

    ``n_classes`` fixes the output width so that a training subset missing a
    class still yields a readout over all classes.
    """

    def __init__(self, ridge=1e-6, n_classes=None):
        self.ridge = ridge
        self.n_classes = n_classes

    def fit(self, X, y):
        y = check_labels(y, n_samples=len(X))
        C = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        self.readout_ = fit_linear(X, y, C, self.ridge)
        self.classes_ = np.arange(C)
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def decision_function(self, X):
        return self.readout_.decision_function(X)

    def predict(self, X):
        return predict_linear(self.readout_, X)


def normalized_adjacency(graph):
    """``D^-1/2 (A + I) D^-1/2`` with self-loops added only where missing."""
    a = graph.adjacency.tolil(copy=True)
    a.setdiag(1.0)
    a = a.tocsr()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = sparse.diags(1.0 / np.sqrt(deg))
    out = (inv_sqrt @ a @ inv_sqrt).tocsr()
    out.sort_indices()
    return out


@dataclass(frozen=True)
class GraphConvHyperparams:
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 0.005
    momentum: float = 0.9
    dropout: float = 0.2

    def __post_init__(self):
        check_positive_int(self.epochs, "epochs", minimum=0)
        check_in_range(self.lr, "lr", 0.0, low_open=True)
        check_in_range(self.weight_decay, "weight_decay", 0.0)
        check_in_range(self.momentum, "momentum", 0.0, 1.0, high_open=True)
        check_in_range(self.dropout, "dropout", 0.0, 1.0, high_open=True)


@dataclass(frozen=True, eq=False)
class GraphConvReadout:
    """One graph-convolution layer ``A_hat (S') W + b`` with ``S' = gain * (S - center) / scale``.

    ``center``/``scale`` are None when the embeddings are used as they are.
    """

    weights: np.ndarray
    bias: np.ndarray
    hyperparams: GraphConvHyperparams = field(default_factory=GraphConvHyperparams)
    seed: int | None = None
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    gain: float = 1.0
    loss_history: tuple = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ShapeError(f"weights {w.shape} and bias {b.shape} do not line up")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ConfigurationError("graph-conv readout has non-finite parameters")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "loss_history", tuple(float(v) for v in self.loss_history))

    @property
    def final_loss(self):
        return self.loss_history[-1] if self.loss_history else None

    def prepare(self, S):
        S = check_matrix(S, "node_embeddings", n_cols=self.weights.shape[0])
        if self.center is None:
            return S if self.gain == 1.0 else self.gain * S
        return self.gain * (S - self.center) / self.scale

    def logits(self, S, graph, a_hat=None):
        if S.shape[0] != graph.num_nodes:
            raise ShapeError(f"{S.shape[0]} embeddings for a graph with {graph.num_nodes} nodes")
        a_hat = normalized_adjacency(graph) if a_hat is None else a_hat
        return a_hat @ (self.prepare(S) @ self.weights) + self.bias


def graphconv_loss_grad(W, b, H, labels, train_idx, weight_decay=0.0):
    """Mean cross-entropy over ``train_idx`` of ``H W + b`` and its gradient.

    ``H`` is the propagated input ``A_hat S``. The L2 term
    ``weight_decay / 2 * (||W||^2 + ||b||^2)`` is included so that the returned
    gradient is exactly what coupled-weight-decay SGD applies.
    """
    Z = H[train_idx] @ W + b
    Z = Z - Z.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    y = labels[train_idx]
    m = train_idx.shape[0]
    loss = -float(logp[np.arange(m), y].mean())
    G = np.exp(logp)
    G[np.arange(m), y] -= 1.0
    G /= m
    gW = H[train_idx].T @ G
    gb = G.sum(axis=0)
    if weight_decay:
        loss += 0.5 * weight_decay * float(np.sum(W * W) + np.sum(b * b))
        gW = gW + weight_decay * W
        gb = gb + weight_decay * b
    return loss, gW, gb


def fit_graphconv(
    node_embeddings,
    graph,
    labels,
    train_mask,
    hp=None,
    seed=0,
    n_classes=None,
    standardize=False,
    gain=1.0,
):
    """Train the graph-convolution readout with full-batch momentum SGD.

    Weights start uniform in ``+-sqrt(6 / (h + C))`` with zero bias. Each
    epoch applies inverted dropout to the node embeddings, propagates with
    ``A_hat`` and takes one step ``buf = momentum * buf + grad; p -= lr * buf``
    where ``grad`` includes ``weight_decay * p``. With ``standardize`` the
    embeddings are centred and scaled per feature by training-node statistics
    and multiplied by ``gain``.
    """
    hp = GraphConvHyperparams() if hp is None else hp
    S = check_matrix(node_embeddings, "node_embeddings")
    n, h = S.shape
    if n != graph.num_nodes:
        raise ShapeError(f"{n} embeddings for a graph with {graph.num_nodes} nodes")
    labels = check_labels(labels, n_samples=n, n_classes=n_classes)
    train_idx = _mask_to_index(train_mask, n)
    if train_idx.size == 0:
        raise ConfigurationError("training mask selects no nodes")
    C = int(n_classes) if n_classes is not None else int(labels.max()) + 1
    gain = check_in_range(gain, "gain", 0.0, low_open=True)

    center = scale = None
    if standardize:
        center = S[train_idx].mean(axis=0)
        scale = S[train_idx].std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        X = gain * (S - center) / scale
    else:
        X = gain * S if gain != 1.0 else S

    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (h + C))
    W = rng.uniform(-limit, limit, size=(h, C))
    b = np.zeros(C)
    buf_w = np.zeros_like(W)
    buf_b = np.zeros_like(b)
    a_hat = normalized_adjacency(graph)
    H_clean = a_hat @ X
    losses = []
    keep = 1.0 - hp.dropout
    for _ in range(hp.epochs):
        if hp.dropout > 0:
            mask = rng.random(X.shape) < keep
            H = a_hat @ (X * mask / keep)
        else:
            H = H_clean
        loss, gW, gb = graphconv_loss_grad(W, b, H, labels, train_idx, hp.weight_decay)
        buf_w = hp.momentum * buf_w + gW
        buf_b = hp.momentum * buf_b + gb
        W = W - hp.lr * buf_w
        b = b - hp.lr * buf_b
        losses.append(loss)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise NumericalError("graph-conv training diverged (non-finite weights)")
    return GraphConvReadout(
        W, b, hp, seed=seed, center=center, scale=scale, gain=gain, loss_history=tuple(losses)
    )


def predict_graphconv(readout, node_embeddings, graph):
    """Per-node argmax of the readout logits (no dropout); ties go to the lowest index."""
    S = np.asarray(node_embeddings, dtype=np.float64)
    return np.argmax(readout.logits(S, graph), axis=1)


def _mask_to_index(mask, n):
    m = np.asarray(mask)
    if m.dtype == bool:
        if m.shape != (n,):
            raise ShapeError(f"boolean mask must have shape ({n},)")
        return np.flatnonzero(m)
    idx = m.astype(np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError("mask index out of range")
    return idx


class GraphConvClassifier(ClassifierMixin, BaseEstimator):
    """Transductive node classifier over one graph.

    ``fit(S, y, graph=..., train_mask=...)`` uses only the labels selected by
    ``train_mask``; ``predict(S, graph=...)`` returns a class for every node.
    """

    def __init__(
        self,
        epochs=200,
        lr=0.01,
        weight_decay=0.005,
        momentum=0.9,
        dropout=0.2,
        standardize=False,
        gain=1.0,
        n_classes=None,
        seed=0,
    ):
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.dropout = dropout
        self.standardize = standardize
        self.gain = gain
        self.n_classes = n_classes
        self.seed = seed

    def hyperparams(self):
        return GraphConvHyperparams(self.epochs, self.lr, self.weight_decay, self.momentum, self.dropout)

    def fit(self, X, y, graph=None, train_mask=None):
        if graph is None:
            raise ConfigurationError("GraphConvClassifier.fit needs the graph")
        n = np.asarray(X).shape[0]
        train_mask = np.ones(n, dtype=bool) if train_mask is None else train_mask
        self.readout_ = fit_graphconv(
            X,
            graph,
            y,
            train_mask,
            self.hyperparams(),
            seed=self.seed,
            n_classes=self.n_classes,
            standardize=self.standardize,
            gain=self.gain,
        )
        self.classes_ = np.arange(self.readout_.weights.shape[1])
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def predict(self, X, graph=None):
        if graph is None:
            raise ConfigurationError("GraphConvClassifier.predict needs the graph")
        return predict_graphconv(self.readout_, X, graph)


def save_readout(readout, path, extra=None):
    """Weights as CSV and everything else in a ``.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, readout.weights, fmt="%.17g", delimiter=",")
    if isinstance(readout, LinearReadout):
        meta = {
            "kind": "linear",
            "ridge": readout.ridge,
            "condition_number": readout.condition_number,
            "rank_deficient": readout.rank_deficient,
            "ops": readout.ops,
        }
    else:
        meta = {
            "kind": "graphconv",
            "bias": readout.bias.tolist(),
            "hyperparams": asdict(readout.hyperparams),
            "seed": readout.seed,
            "gain": readout.gain,
            "center": None if readout.center is None else readout.center.tolist(),
            "scale": None if readout.scale is None else readout.scale.tolist(),
            "final_loss": readout.final_loss,
        }
    meta["schema"] = READOUT_SCHEMA
    meta["shape"] = list(readout.weights.shape)
    meta.update(extra or {})
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path, sidecar


def load_readout(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if meta.get("schema") != READOUT_SCHEMA:
        raise ConfigurationError(f"{path}: unsupported readout schema {meta.get('schema')!r}")
    W = np.loadtxt(path, delimiter=",", ndmin=2).reshape(meta["shape"])
    if meta["kind"] == "linear":
        return LinearReadout(
            W,
            ridge=meta["ridge"],
            condition_number=meta["condition_number"],
            rank_deficient=meta["rank_deficient"],
            ops=meta.get("ops", {}),
        )
    return GraphConvReadout(
        W,
        np.asarray(meta["bias"]),
        GraphConvHyperparams(**meta["hyperparams"]),
        seed=meta.get("seed"),
        center=_optional_array(meta.get("center")),
        scale=_optional_array(meta.get("scale")),
        gain=meta.get("gain", 1.0),
        loss_history=() if meta.get("final_loss") is None else (meta["final_loss"],),
    )


def _optional_array(v):
    return None if v is None else np.asarray(v, dtype=np.float64)
