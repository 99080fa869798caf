"""Benchmark graph parsing and node feature construction.

Graphs are held in a canonical form: 0-based node indices, an undirected edge
list with each edge stored once as ``(min, max)`` in sorted order, and node
feature vectors whose last element is the constant bias 1.0.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse

from .exceptions import ConfigurationError, ParseError, ShapeError

DATASET_SCHEMA = "esgnn.dataset/1"
RECIPES = ("one_hot_node_label", "constant_unit", "raw")


def canonical_edges(pairs):
    """Deduplicate undirected pairs into a sorted ``(E, 2)`` int array with ``u <= v``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


@dataclass(frozen=True, eq=False)
class GraphData:
    """One graph: topology, node features (bias last) and optional labels."""

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    node_labels: np.ndarray | None = None
    graph_label: int | None = None

    def __post_init__(self):
        n = int(self.num_nodes)
        if n < 1:
            raise ShapeError(f"num_nodes must be positive, got {n}")
        edges = canonical_edges(self.edges)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ShapeError(f"edge endpoint outside [0, {n})")
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ShapeError(f"features must have shape ({n}, d), got {feats.shape}")
        if feats.shape[1] < 1 or not np.all(feats[:, -1] == 1.0):
            raise ConfigurationError("every feature vector must end with the bias value 1.0")
        labels = self.node_labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ShapeError(f"node_labels must have shape ({n},), got {labels.shape}")
            labels.setflags(write=False)
        for arr in (edges, feats):
            arr.setflags(write=False)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "node_labels", labels)
        if self.graph_label is not None:
            object.__setattr__(self, "graph_label", int(self.graph_label))

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def num_self_loops(self):
        return int(np.count_nonzero(self.edges[:, 0] == self.edges[:, 1]))

    @property
    def num_messages(self):
        """Directed messages per recursion step: 2|E| plus one per self-loop."""
        loops = self.num_self_loops
        return 2 * (self.num_edges - loops) + loops

    @cached_property
    def adjacency(self):
        """Symmetric CSR adjacency with sorted column indices; a self-loop is a single 1."""
        e = self.edges
        off = e[:, 0] != e[:, 1]
        rows = np.concatenate([e[:, 0], e[off, 1]])
        cols = np.concatenate([e[:, 1], e[off, 0]])
        a = sparse.csr_matrix(
            (np.ones(rows.shape[0]), (rows, cols)), shape=(self.num_nodes, self.num_nodes)
        )
        a.sort_indices()
        return a

    def degrees(self):
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    def max_degree(self):
        return int(self.degrees().max()) if self.num_nodes else 0

    def permute(self, perm):
        """Relabel nodes so that old node ``i`` becomes ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(self.num_nodes)):
            raise ConfigurationError("perm must be a permutation of range(num_nodes)")
        inv = np.argsort(perm)
        return GraphData(
            num_nodes=self.num_nodes,
            edges=perm[self.edges],
            features=self.features[inv],
            node_labels=None if self.node_labels is None else self.node_labels[inv],
            graph_label=self.graph_label,
        )

    def to_dict(self):
        return {
            "num_nodes": self.num_nodes,
            "edges": self.edges.tolist(),
            "features": self.features.tolist(),
            "node_labels": None if self.node_labels is None else self.node_labels.tolist(),
            "graph_label": self.graph_label,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            num_nodes=d["num_nodes"],
            edges=np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2),
            features=np.asarray(d["features"], dtype=np.float64),
            node_labels=d.get("node_labels"),
            graph_label=d.get("graph_label"),
        )

    def __eq__(self, other):
        if not isinstance(other, GraphData):
            return NotImplemented
        same_labels = (self.node_labels is None and other.node_labels is None) or (
            self.node_labels is not None
            and other.node_labels is not None
            and np.array_equal(self.node_labels, other.node_labels)
        )
        return (
            self.num_nodes == other.num_nodes
            and self.graph_label == other.graph_label
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
            and same_labels
        )

    __hash__ = None


def disjoint_union(graphs):
    """Concatenate graphs into one graph without connecting them."""
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    labels = None
    if all(g.node_labels is not None for g in graphs):
        labels = np.concatenate([g.node_labels for g in graphs])
    return GraphData(
        num_nodes=int(offsets[-1]),
        edges=np.concatenate([g.edges + off for g, off in zip(graphs, offsets)]),
        features=np.concatenate([g.features for g in graphs]),
        node_labels=labels,
    )


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered collection of graphs sharing one feature dimension."""

    graphs: tuple
    num_classes: int
    name: str = ""
    class_names: tuple = ()
    node_label_names: tuple = ()
    recipe: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        graphs = tuple(self.graphs)
        object.__setattr__(self, "graphs", graphs)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "node_label_names", tuple(self.node_label_names))
        dims = {g.feature_dim for g in graphs}
        if len(dims) > 1:
            raise ShapeError(f"graphs disagree on feature_dim: {sorted(dims)}")
        for g in graphs:
            if g.graph_label is not None and not 0 <= g.graph_label < self.num_classes:
                raise ConfigurationError(
                    f"graph label {g.graph_label} outside [0, {self.num_classes})"
                )

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def feature_dim(self):
        return self.graphs[0].feature_dim if self.graphs else 0

    @property
    def labels(self):
        return np.array([g.graph_label for g in self.graphs], dtype=np.int64)

    @property
    def total_nodes(self):
        return int(sum(g.num_nodes for g in self.graphs))

    def subset(self, indices):
        return replace(self, graphs=tuple(self.graphs[i] for i in indices))

    def to_dict(self):
        return {
            "schema": DATASET_SCHEMA,
            "name": self.name,
            "num_classes": self.num_classes,
            "class_names": list(self.class_names),
            "node_label_names": list(self.node_label_names),
            "recipe": self.recipe,
            "graphs": [g.to_dict() for g in self.graphs],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != DATASET_SCHEMA:
            raise ConfigurationError(f"unsupported dataset schema {d.get('schema')!r}")
        return cls(
            graphs=tuple(GraphData.from_dict(g) for g in d["graphs"]),
            num_classes=d["num_classes"],
            name=d.get("name", ""),
            class_names=tuple(d.get("class_names", ())),
            node_label_names=tuple(d.get("node_label_names", ())),
            recipe=d.get("recipe"),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def content_hash(self):
        """SHA-256 over the canonical arrays; stable across runs and platforms."""
        h = hashlib.sha256()
        h.update(f"{self.name}|{self.num_classes}|{self.recipe}".encode())
        for g in self.graphs:
            h.update(np.int64(g.num_nodes).tobytes())
            h.update(np.ascontiguousarray(g.edges, dtype="<i8").tobytes())
            h.update(np.ascontiguousarray(g.features, dtype="<f8").tobytes())
            if g.node_labels is not None:
                h.update(np.ascontiguousarray(g.node_labels, dtype="<i8").tobytes())
            h.update(np.int64(-1 if g.graph_label is None else g.graph_label).tobytes())
        return h.hexdigest()


def _read_lines(path):
    path = Path(path)
    if not path.exists():
        raise ParseError("file not found", path=path)
    with open(path) as fh:
        return [line.strip() for line in fh]


def _parse_ints(path, lines, width):
    """Parse comma-separated integer rows; blank lines are skipped."""
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != width:
            raise ParseError(f"expected {width} comma-separated values, got {len(parts)}", path, lineno)
        try:
            out.append([int(float(p)) if "." in p or "e" in p.lower() else int(p) for p in parts])
        except ValueError:
            raise ParseError(f"non-integer value in {line!r}", path, lineno) from None
    return np.asarray(out, dtype=np.int64).reshape(-1, width)


def _index_labels(values):
    """Map label values to contiguous indices in sorted order."""
    uniq = np.unique(values)
    return np.searchsorted(uniq, values), uniq


def parse_tudataset(directory, name):
    """Read a dataset in the TU text layout (``<name>_A.txt`` and friends)."""
    d = Path(directory)
    prefix = d / name
    a_path = Path(f"{prefix}_A.txt")
    gi_path = Path(f"{prefix}_graph_indicator.txt")
    gl_path = Path(f"{prefix}_graph_labels.txt")
    nl_path = Path(f"{prefix}_node_labels.txt")

    indicator = _parse_ints(gi_path, _read_lines(gi_path), 1)[:, 0]
    graph_labels_raw = _parse_ints(gl_path, _read_lines(gl_path), 1)[:, 0]
    n_graphs = graph_labels_raw.shape[0]
    if n_graphs == 0:
        raise ParseError("no graph labels", gl_path)
    for lineno, gid in enumerate(indicator, start=1):
        if not 1 <= gid <= n_graphs:
            raise ParseError(f"node refers to graph {gid}, only {n_graphs} graphs exist", gi_path, lineno)
    node_graph = indicator - 1
    n_nodes = node_graph.shape[0]

    a_lines = _read_lines(a_path)
    pairs = _parse_ints(a_path, a_lines, 2) - 1
    if pairs.size:
        bad = np.flatnonzero((pairs < 0).any(axis=1) | (pairs >= n_nodes).any(axis=1))
        if bad.size:
            raise ParseError(f"edge references unknown node {pairs[bad[0]] + 1}", a_path, _nth_data_line(a_lines, bad[0]))
        cross = np.flatnonzero(node_graph[pairs[:, 0]] != node_graph[pairs[:, 1]])
        if cross.size:
            raise ParseError("edge connects nodes of different graphs", a_path, _nth_data_line(a_lines, cross[0]))

    node_label_idx = node_label_names = None
    if nl_path.exists():
        raw = _parse_ints(nl_path, _read_lines(nl_path), 1)[:, 0]
        if raw.shape[0] != n_nodes:
            raise ParseError(f"{raw.shape[0]} node labels for {n_nodes} nodes", nl_path)
        node_label_idx, node_label_names = _index_labels(raw)

    graph_label_idx, class_values = _index_labels(graph_labels_raw)

    # per-graph local indexing keeps the node order of the indicator file
    order = np.argsort(node_graph, kind="stable")
    counts = np.bincount(node_graph, minlength=n_graphs)
    starts = np.concatenate([[0], np.cumsum(counts)])
    local = np.empty(n_nodes, dtype=np.int64)
    local[order] = np.arange(n_nodes) - np.repeat(starts[:-1], counts)
    edge_graph = node_graph[pairs[:, 0]] if pairs.size else np.zeros(0, dtype=np.int64)
    edge_order = np.argsort(edge_graph, kind="stable")
    edge_counts = np.bincount(edge_graph, minlength=n_graphs)
    edge_starts = np.concatenate([[0], np.cumsum(edge_counts)])

    graphs = []
    for gidx in range(n_graphs):
        nodes = order[starts[gidx] : starts[gidx + 1]]
        n = nodes.shape[0]
        if n == 0:
            raise ParseError(f"graph {gidx + 1} has no nodes", gi_path)
        e_sel = edge_order[edge_starts[gidx] : edge_starts[gidx + 1]]
        graphs.append(
            GraphData(
                num_nodes=n,
                edges=local[pairs[e_sel]] if e_sel.size else np.zeros((0, 2), dtype=np.int64),
                features=np.ones((n, 1)),
                node_labels=None if node_label_idx is None else node_label_idx[nodes],
                graph_label=int(graph_label_idx[gidx]),
            )
        )
    return Dataset(
        graphs=tuple(graphs),
        num_classes=int(class_values.shape[0]),
        name=name,
        class_names=tuple(int(v) for v in class_values),
        node_label_names=() if node_label_names is None else tuple(int(v) for v in node_label_names),
        meta={"source_files": [str(p) for p in (a_path, gi_path, gl_path, nl_path) if p.exists()]},
    )


def _nth_data_line(lines, k):
    seen = -1
    for lineno, line in enumerate(lines, start=1):
        if line:
            seen += 1
            if seen == k:
                return lineno
    return None


def parse_cora(content_path, cites_path):
    """Read the CORA ``.content``/``.cites`` pair into one GraphData.

    Class names are indexed in order of first appearance; the mapping is
    returned in the wrapping Dataset's ``class_names``. Features are the binary
    word vector followed by the bias.
    """
    content_path, cites_path = Path(content_path), Path(cites_path)
    ids, rows, classes = {}, [], []
    class_index = {}
    width = None
    for lineno, line in enumerate(_read_lines(content_path), start=1):
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ParseError("expected '<id> <features...> <class>'", content_path, lineno)
        n_feat = len(parts) - 2
        if width is None:
            width = n_feat
        elif n_feat != width:
            raise ParseError(f"expected {width} feature values, got {n_feat}", content_path, lineno)
        if parts[0] in ids:
            raise ParseError(f"duplicate node id {parts[0]!r}", content_path, lineno)
        try:
            rows.append(np.array(parts[1:-1], dtype=np.float64))
        except ValueError:
            raise ParseError("non-numeric feature value", content_path, lineno) from None
        ids[parts[0]] = len(ids)
        classes.append(class_index.setdefault(parts[-1], len(class_index)))
    if not ids:
        raise ParseError("no nodes", content_path)

    pairs = []
    for lineno, line in enumerate(_read_lines(cites_path), start=1):
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("expected '<cited-id> <citing-id>'", cites_path, lineno)
        try:
            pairs.append((ids[parts[0]], ids[parts[1]]))
        except KeyError as exc:
            raise ParseError(f"unknown node id {exc.args[0]!r}", cites_path, lineno) from None

    n = len(ids)
    x = np.vstack(rows)
    graph = GraphData(
        num_nodes=n,
        edges=np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
        features=np.hstack([x, np.ones((n, 1))]),
        node_labels=np.asarray(classes, dtype=np.int64),
    )
    return graph, tuple(class_index)


def cora_dataset(content_path, cites_path, name="cora"):
    """Wrap :func:`parse_cora` output as a one-graph Dataset over node classes."""
    graph, class_names = parse_cora(content_path, cites_path)
    return Dataset(
        graphs=(graph,),
        num_classes=len(class_names),
        name=name,
        class_names=class_names,
        recipe="raw",
        meta={"source_files": [str(content_path), str(cites_path)]},
    )


def build_features(dataset, recipe):
    """Return a copy of ``dataset`` whose node features follow ``recipe``.

    ``one_hot_node_label`` gives one-hot node labels plus bias,
    ``constant_unit`` gives ``(1, 1)`` for every node and ``raw`` keeps the
    parsed features.
    """
    if recipe not in RECIPES:
        raise ConfigurationError(f"unknown feature recipe {recipe!r}; choose from {RECIPES}")
    if recipe == "raw":
        return replace(dataset, recipe="raw")
    graphs = []
    if recipe == "one_hot_node_label":
        n_labels = len(dataset.node_label_names) or None
        if n_labels is None:
            if any(g.node_labels is None for g in dataset.graphs):
                raise ConfigurationError("one_hot_node_label needs node labels on every graph")
            n_labels = int(max(g.node_labels.max() for g in dataset.graphs)) + 1
        for g in dataset.graphs:
            if g.node_labels is None:
                raise ConfigurationError("one_hot_node_label needs node labels on every graph")
            x = np.zeros((g.num_nodes, n_labels + 1))
            x[np.arange(g.num_nodes), g.node_labels] = 1.0
            x[:, -1] = 1.0
            graphs.append(replace(g, features=x))
    else:
        for g in dataset.graphs:
            graphs.append(replace(g, features=np.ones((g.num_nodes, 2))))
    return replace(dataset, graphs=tuple(graphs), recipe=recipe)


def subsample(dataset, k, seed=0):
    """Uniform random subset of ``k`` graphs without replacement, in original order."""
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 0:
        raise ConfigurationError(f"k must be a non-negative integer, got {k!r}")
    if k > len(dataset):
        raise ConfigurationError(f"cannot draw {k} graphs from a dataset of {len(dataset)}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(dataset), size=k, replace=False))
    return dataset.subset(chosen.tolist())
