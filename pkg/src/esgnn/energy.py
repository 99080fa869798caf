"""Closed-form operation counts and per-stage energy estimates.

One multiply-accumulate counts as 2 OPs. The forward pass is split into the
stages of the bar charts: input projection and recursion run on the crossbar
in the hybrid system, pooling/activation and the readout run digitally.
Per-op energies are calibration constants back-solved from reported totals,
so the resulting ratios are self-consistency checks, not measurements.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .exceptions import ConfigurationError
from .validation import check_graphs, check_in_range

STAGES = ("input_projection", "recursion", "pooling_activation", "readout_inference", "readout_training")
HEADLINE_STAGES = ("input_projection", "recursion", "readout_inference")
READOUT_KINDS = ("linear", "graphconv")
ACTIVATION_OPS = 4  # tanh + leak (multiply, add) + blend, per neuron per step


@dataclass
class OpCounter:
    """Per-stage OP counts. ``total`` sums every stage; ``forward`` omits the
    separately reported pooling/activation category and training."""

    input_projection: int = 0
    recursion: int = 0
    pooling_activation: int = 0
    readout_inference: int = 0
    readout_training: int = 0
    degenerate: bool = False

    def __post_init__(self):
        for name in STAGES:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} count must be non-negative")

    @property
    def total(self):
        return sum(getattr(self, s) for s in STAGES)

    @property
    def forward(self):
        return sum(getattr(self, s) for s in HEADLINE_STAGES)

    def merge(self, other):
        """Stage-wise sum; associative and commutative."""
        kw = {s: getattr(self, s) + getattr(other, s) for s in STAGES}
        return OpCounter(**kw, degenerate=self.degenerate or other.degenerate)

    __add__ = merge

    def to_dict(self):
        d = asdict(self)
        d["total"] = self.total
        d["forward"] = self.forward
        return d


@dataclass(frozen=True)
class GraphStats:
    """Aggregate size of a graph collection; enough to count operations."""

    num_graphs: int
    total_nodes: int
    total_messages: int
    feature_dim: int

    @classmethod
    def of(cls, graphs):
        graphs = check_graphs(graphs)
        return cls(
            num_graphs=len(graphs),
            total_nodes=sum(g.num_nodes for g in graphs),
            total_messages=sum(g.num_messages for g in graphs),
            feature_dim=graphs[0].feature_dim if graphs else 0,
        )


@dataclass(frozen=True)
class EnergyModel:
    """Energy per OP for the digital baseline and for crossbar-executed stages (joules)."""

    e_digital_per_op: float = 20.2e-12
    e_analog_per_op: float = 35e-15
    analog_stages: tuple = ("input_projection", "recursion")

    def __post_init__(self):
        check_in_range(self.e_digital_per_op, "e_digital_per_op", 0.0, low_open=True)
        check_in_range(self.e_analog_per_op, "e_analog_per_op", 0.0, low_open=True)
        object.__setattr__(self, "analog_stages", tuple(self.analog_stages))
        unknown = set(self.analog_stages) - set(STAGES)
        if unknown:
            raise ConfigurationError(f"unknown stages {sorted(unknown)}")

    def executor(self, stage):
        return "analog" if stage in self.analog_stages else "digital"

    def to_dict(self):
        d = asdict(self)
        d["analog_stages"] = list(self.analog_stages)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _stats(dataset):
    return dataset if isinstance(dataset, GraphStats) else GraphStats.of(dataset)


def count_ops(dataset, config, readout_kind="linear", n_classes=2):
    """Forward-pass OP counts for embedding and classifying every graph of ``dataset``.

    ``dataset`` may be graphs or a :class:`GraphStats`. ``readout_kind`` is
    ``"linear"`` (sum pooling then one linear layer per graph) or
    ``"graphconv"`` (one graph-convolution layer over the nodes).
    """
    if readout_kind not in READOUT_KINDS:
        raise ConfigurationError(f"readout_kind must be one of {READOUT_KINDS}")
    st = _stats(dataset)
    h, T, C = config.h, config.T, int(n_classes)
    n = st.total_nodes
    counter = OpCounter(
        input_projection=2 * h * st.feature_dim * n,
        recursion=2 * h * h * st.total_messages * T,
    )
    activation = ACTIVATION_OPS * h * n * T
    if readout_kind == "linear":
        counter.pooling_activation = h * n + activation
        counter.readout_inference = 2 * (h + 1) * C * st.num_graphs
    else:
        counter.pooling_activation = activation
        counter.readout_inference = 2 * (h * C * n + C * (st.total_messages + n))
    return counter


def count_training_ops(dataset, config, readout_kind="linear", n_classes=2, n_train=None, epochs=200):
    """Readout training cost.

    Linear readout: forming and solving the normal equations,
    ``2N(h+1)^2 + (2/3)(h+1)^3 + 2N(h+1)C``. Graph-convolution readout: each
    SGD epoch costs about three forward passes of the layer (forward, input
    gradient, weight gradient). ``n_train`` defaults to every sample.
    """
    st = _stats(dataset)
    h, C = config.h, int(n_classes)
    if readout_kind == "linear":
        N = st.num_graphs if n_train is None else int(n_train)
        d = h + 1
        ops = 2 * N * d * d + (2 * d**3) // 3 + 2 * N * d * C
        return OpCounter(readout_training=ops, degenerate=N == 0)
    if readout_kind == "graphconv":
        per_epoch = 3 * count_ops(st, config, "graphconv", C).readout_inference
        return OpCounter(readout_training=per_epoch * int(epochs), degenerate=epochs == 0)
    raise ConfigurationError(f"readout_kind must be one of {READOUT_KINDS}")


def energy_report(counter, model, label="calibration self-consistency"):
    """Per-stage energy for an all-digital system and for the hybrid system.

    Headline totals and the ratio cover the forward stages only; the
    pooling/activation category is itemized but excluded from them, and
    training is reported on its own line.
    """
    breakdown = []
    for stage in STAGES:
        ops = getattr(counter, stage)
        e_hybrid = model.e_analog_per_op if model.executor(stage) == "analog" else model.e_digital_per_op
        breakdown.append(
            {
                "stage": stage,
                "ops": ops,
                "executor": model.executor(stage),
                "digital_energy_J": ops * model.e_digital_per_op,
                "analog_energy_J": ops * e_hybrid,
                "headline": stage in HEADLINE_STAGES,
            }
        )
    digital = sum(b["digital_energy_J"] for b in breakdown if b["headline"])
    hybrid = sum(b["analog_energy_J"] for b in breakdown if b["headline"])
    return {
        "label": label,
        "ops_per_mac": 2,
        "breakdown": breakdown,
        "forward_ops": counter.forward,
        "total_ops": counter.total,
        "digital_forward_energy_J": digital,
        "analog_forward_energy_J": hybrid,
        "ratio": digital / hybrid if hybrid > 0 else None,
        "training_ops": counter.readout_training,
        "training_energy_J": counter.readout_training * model.e_digital_per_op,
        "energy_model": model.to_dict(),
    }


def calibrate(counter, target_ratio, e_digital_per_op=20.2e-12, analog_stages=("input_projection", "recursion")):
    """Analog energy per OP that makes the forward digital/hybrid ratio equal ``target_ratio``."""
    check_in_range(target_ratio, "target_ratio", 1.0, low_open=True)
    analog_ops = sum(getattr(counter, s) for s in HEADLINE_STAGES if s in analog_stages)
    digital_ops = sum(getattr(counter, s) for s in HEADLINE_STAGES if s not in analog_stages)
    if analog_ops == 0:
        raise ConfigurationError("no analog operations to calibrate against")
    budget = counter.forward * e_digital_per_op / target_ratio - digital_ops * e_digital_per_op
    if budget <= 0:
        raise ConfigurationError(
            f"ratio {target_ratio} is unreachable: digital stages alone exceed the energy budget"
        )
    return EnergyModel(e_digital_per_op, budget / analog_ops, tuple(analog_stages))
