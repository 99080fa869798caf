"""Echo state graph embedding executed on emulated random resistor arrays.

Each node carries an ``h``-dimensional state. One recursion step computes

    s_j <- a * s_j + (1 - a) * tanh(u_j + sum_{k in N(j)} alpha_r * VMM(G_R, q(s_k)))

where ``u_j = alpha_i * VMM(G_I, x_j)`` is computed once per graph and every
neighbour term is one bit-serial crossbar read of that neighbour's quantized
state. Leak, aggregation and the activation are exact floating point.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin

from .device import (
    CrossbarArray,
    DeviceModel,
    QuantConfig,
    VmmStats,
    form_random_array,
    spectral_radius,
    vmm_moments,
)
from .exceptions import ConfigurationError, EchoStateError, ShapeError
from .validation import check_graphs, check_in_range, check_positive_int

logger = logging.getLogger(__name__)

ACTIVATIONS = {"tanh": np.tanh}


@dataclass(frozen=True)
class EsgnnConfig:
    """Hyperparameters of the embedding.

    ``quant`` encodes node states before each recursive read and
    ``input_quant`` encodes node features for the input projection. States
    stay well below 1 when ``alpha_r * G_R`` is contractive, so the state
    quantizer usually wants a smaller full scale than the input quantizer.
    ``fused`` replaces the per-neighbour reads with a single read of the summed
    neighbour states (cheaper, but not identical after quantization).
    """

    h: int = 50
    T: int = 4
    a: float = 0.2
    alpha_i: float = 0.0016
    alpha_r: float = 0.006
    activation: str = "tanh"
    quant: QuantConfig = field(default_factory=QuantConfig)
    input_quant: QuantConfig = field(default_factory=QuantConfig)
    fused: bool = False

    def __post_init__(self):
        check_positive_int(self.h, "h")
        check_positive_int(self.T, "T")
        check_in_range(self.a, "a", 0.0, 1.0)
        check_in_range(self.alpha_i, "alpha_i", 0.0, low_open=True)
        check_in_range(self.alpha_r, "alpha_r", 0.0, low_open=True)
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}"
            )
        for name in ("quant", "input_quant"):
            if not isinstance(getattr(self, name), QuantConfig):
                raise ConfigurationError(f"{name} must be a QuantConfig")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for name in ("quant", "input_quant"):
            if isinstance(d.get(name), dict):
                d[name] = QuantConfig(**d[name])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class NodeStates:
    """Node states ``s^(t)`` as an ``(n, h)`` matrix at step ``t``."""

    values: np.ndarray
    t: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"states must be 2-D, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, n, h):
        return cls(np.zeros((n, h)), 0)

    @property
    def pooled(self):
        return self.values.sum(axis=0)


@dataclass(frozen=True, eq=False)
class EsgnnModel:
    """Input and recursive arrays plus the config that scales them into weights.

    Construction checks the echo-state condition ``rho(alpha_r * G_R) < 1``
    and raises :class:`EchoStateError` unless ``allow_unstable`` is set. Read
    noise is applied when ``noise_seed`` is not None and the arrays carry a
    device model with non-zero ``read_noise_std``.
    """

    w_input: CrossbarArray
    w_recursive: CrossbarArray
    config: EsgnnConfig
    noise_seed: int | None = None
    allow_unstable: bool = False
    rho: float = field(init=False)

    def __post_init__(self):
        h = self.config.h
        if self.w_input.rows != h:
            raise ShapeError(f"w_input has {self.w_input.rows} rows, config.h={h}")
        if self.w_recursive.shape != (h, h):
            raise ShapeError(f"w_recursive must be {h}x{h}, got {self.w_recursive.shape}")
        rho = spectral_radius(self.w_recursive, scale=self.config.alpha_r)
        object.__setattr__(self, "rho", rho)
        if rho >= 1.0 and not self.allow_unstable:
            raise EchoStateError(
                f"echo-state condition violated: rho(alpha_r * G_R) = {rho:.6g} >= 1"
            )

    @classmethod
    def random(cls, config, feature_dim, device=None, seed=0, noise_seed=None, allow_unstable=False):
        """Form both arrays from ``device`` with seeds derived from ``seed``."""
        device = DeviceModel() if device is None else device
        s_in, s_rec = array_seeds(seed)
        w_in = form_random_array(config.h, feature_dim, device, seed=s_in)
        w_rec = form_random_array(config.h, config.h, device, seed=s_rec)
        return cls(w_in, w_rec, config, noise_seed=noise_seed, allow_unstable=allow_unstable)

    @property
    def feature_dim(self):
        return self.w_input.cols

    def degree_bound(self, max_degree):
        """Graph-aware contraction bound ``rho * max_degree``; < 1 guarantees fading memory."""
        return self.rho * max_degree

    def noise_rng(self, graph_index):
        """Noise stream for one graph; independent of evaluation order and worker count."""
        if self.noise_seed is None:
            return None
        return np.random.default_rng([int(self.noise_seed), int(graph_index)])

    def input_projection(self, graph, rng=None, stats=None):
        """``u_j = alpha_i * VMM(G_I, x_j)`` for every node, shape ``(n, h)``."""
        x = graph.features
        if x.shape[1] != self.feature_dim:
            raise ShapeError(
                f"graph feature_dim {x.shape[1]} does not match w_input cols {self.feature_dim}"
            )
        mean, var = vmm_moments(
            self.w_input, x, self.config.input_quant, stats, with_variance=rng is not None
        )
        if var is not None:
            mean = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
        return self.config.alpha_i * mean

    def recursive_input(self, graph, states, rng=None, stats=None):
        """Aggregated neighbour term ``sum_k VMM(G_R, q(s_k))`` per node (before alpha_r)."""
        s = states.values if isinstance(states, NodeStates) else np.asarray(states)
        adj = graph.adjacency
        q = self.config.quant
        if self.config.fused:
            agg = adj @ s
            mean, var = vmm_moments(self.w_recursive, agg, q, stats, with_variance=rng is not None)
        else:
            # one read per directed message; the read result only depends on the sender
            reads = VmmStats() if stats is not None else None
            y, v = vmm_moments(self.w_recursive, s, q, reads, with_variance=rng is not None)
            if stats is not None:
                stats.clamped += reads.clamped
                stats.record(self.w_recursive, graph.num_messages, q)
            mean = adj @ y
            var = None if v is None else adj @ v
        if var is not None:
            mean = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
        return mean

    def step(self, graph, states, u, rng=None, stats=None):
        """One synchronous update of every node."""
        cfg = self.config
        if states.t >= cfg.T:
            raise ConfigurationError(f"states already at step {states.t} of T={cfg.T}")
        s = states.values
        if s.shape != (graph.num_nodes, cfg.h) or u.shape != s.shape:
            raise ShapeError(f"states and u must be ({graph.num_nodes}, {cfg.h})")
        pre = u + cfg.alpha_r * self.recursive_input(graph, s, rng, stats)
        new = cfg.a * s + (1.0 - cfg.a) * ACTIVATIONS[cfg.activation](pre)
        return NodeStates(new, states.t + 1)

    def run(self, graph, graph_index=0, stats=None, trajectory=False):
        """Input projection then ``T`` steps. Returns final states or the whole trajectory."""
        rng = self.noise_rng(graph_index)
        u = self.input_projection(graph, rng, stats)
        states = NodeStates.zeros(graph.num_nodes, self.config.h)
        history = [states] if trajectory else None
        for _ in range(self.config.T):
            states = self.step(graph, states, u, rng, stats)
            if trajectory:
                history.append(states)
        return history if trajectory else states

    def embed_nodes(self, graph, graph_index=0, stats=None):
        return self.run(graph, graph_index, stats).values

    def embed_graph(self, graph, graph_index=0, stats=None):
        """Sum-pooled final node states."""
        return self.run(graph, graph_index, stats).pooled

    def embed_dataset(self, graphs, n_jobs=1, stats=None):
        """Graph embeddings for every graph as an ``(N, h)`` matrix."""
        graphs = check_graphs(graphs)
        if not graphs:
            return np.zeros((0, self.config.h))
        results = _map(_embed_one, [(self, g, i) for i, g in enumerate(graphs)], n_jobs)
        if stats is not None:
            for _, st in results:
                stats.merge(st)
        return np.vstack([r for r, _ in results])


def _embed_one(model, graph, index):
    st = VmmStats()
    return model.embed_graph(graph, index, st), st


def _map(fn, arg_list, n_jobs):
    if n_jobs == 1 or len(arg_list) < 2:
        return [fn(*args) for args in arg_list]
    # results come back in submission order, so output never depends on n_jobs
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(fn)(*args) for args in arg_list)


def array_seeds(seed):
    """Two independent integer seeds (input array, recursive array) derived from ``seed``."""
    children = np.random.SeedSequence(int(seed)).spawn(2)
    return tuple(int(c.generate_state(1, dtype=np.uint64)[0]) for c in children)


class ESGNNEmbedder(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer mapping graphs to echo state embeddings.

    ``fit`` forms the random arrays (nothing is learned from the data beyond
    the feature dimension); ``transform`` returns sum-pooled graph embeddings
    or, with ``level="node"``, the node states of a single graph.

    Parameters
    ----------
    h, T, a, alpha_i, alpha_r, activation, fused :
        See :class:`EsgnnConfig`.
    m_bits, x_max :
        State quantizer. ``input_x_max`` is the input quantizer's full scale.
    device : DeviceModel or None
    array_seed : int
        Seed for forming both arrays.
    noise_seed : int or None
        Read-noise seed; None disables read noise.
    allow_unstable : bool
        Skip the echo-state check.
    level : {"graph", "node"}
    n_jobs : int
        Worker threads for per-graph embedding; results do not depend on it.
    """

    def __init__(
        self,
        h=50,
        T=4,
        a=0.2,
        alpha_i=0.0016,
        alpha_r=0.006,
        activation="tanh",
        m_bits=4,
        x_max=1.0,
        input_x_max=1.0,
        v_read=0.3,
        fused=False,
        device=None,
        array_seed=0,
        noise_seed=None,
        allow_unstable=False,
        level="graph",
        n_jobs=1,
    ):
        self.h = h
        self.T = T
        self.a = a
        self.alpha_i = alpha_i
        self.alpha_r = alpha_r
        self.activation = activation
        self.m_bits = m_bits
        self.x_max = x_max
        self.input_x_max = input_x_max
        self.v_read = v_read
        self.fused = fused
        self.device = device
        self.array_seed = array_seed
        self.noise_seed = noise_seed
        self.allow_unstable = allow_unstable
        self.level = level
        self.n_jobs = n_jobs

    def make_config(self):
        return EsgnnConfig(
            h=self.h,
            T=self.T,
            a=self.a,
            alpha_i=self.alpha_i,
            alpha_r=self.alpha_r,
            activation=self.activation,
            quant=QuantConfig(self.m_bits, self.v_read, self.x_max),
            input_quant=QuantConfig(self.m_bits, self.v_read, self.input_x_max),
            fused=self.fused,
        )

    def fit(self, X, y=None):
        graphs = check_graphs(X)
        if not graphs:
            raise ConfigurationError("cannot fit on an empty collection of graphs")
        if self.level not in ("graph", "node"):
            raise ConfigurationError(f"level must be 'graph' or 'node', got {self.level!r}")
        self.model_ = EsgnnModel.random(
            self.make_config(),
            graphs[0].feature_dim,
            device=self.device,
            seed=self.array_seed,
            noise_seed=self.noise_seed,
            allow_unstable=self.allow_unstable,
        )
        self.rho_ = self.model_.rho
        bound = self.model_.degree_bound(max(g.max_degree() for g in graphs))
        self.degree_bound_ = bound
        if bound >= 1.0:
            logger.debug("rho * max_degree = %.4g >= 1; fading memory is not guaranteed", bound)
        self.n_features_in_ = graphs[0].feature_dim
        return self

    def transform(self, X):
        if not hasattr(self, "model_"):
            raise ConfigurationError("ESGNNEmbedder is not fitted; call fit first")
        graphs = check_graphs(X)
        self.stats_ = VmmStats()
        if self.level == "node":
            if len(graphs) != 1:
                raise ConfigurationError("level='node' expects exactly one graph")
            return self.model_.embed_nodes(graphs[0], 0, self.stats_)
        return self.model_.embed_dataset(graphs, n_jobs=self.n_jobs, stats=self.stats_)
