"""Shared fixtures: dataset locations, small synthetic graphs and hand-built models."""

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from esgnn.device import CrossbarArray, DeviceModel, QuantConfig
from esgnn.graphdata import Dataset, GraphData
from esgnn.model import EsgnnConfig, EsgnnModel

REPO = Path(__file__).resolve().parents[1]
DATA = Path(os.environ.get("ESGNN_DATA_DIR", REPO / "data"))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _data_env(monkeypatch):
    monkeypatch.setenv("ESGNN_DATA_DIR", str(DATA))


@pytest.fixture(scope="session")
def mutag_dir():
    d = DATA / "MUTAG"
    if not d.exists():
        pytest.fail(f"MUTAG not found under {DATA}")
    return d


@pytest.fixture(scope="session")
def cora_files():
    c, e = DATA / "cora" / "cora.content", DATA / "cora" / "cora.cites"
    if not c.exists():
        pytest.fail(f"CORA not found under {DATA}")
    return c, e


def random_graph(rng, n=None, p=0.3, feature_dim=3, label=None, self_loops=False):
    """Erdos-Renyi graph with one-hot-ish features plus bias."""
    n = int(rng.integers(1, 9)) if n is None else n
    iu = np.triu_indices(n, k=0 if self_loops else 1)
    keep = rng.random(iu[0].shape[0]) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    x = np.zeros((n, feature_dim))
    x[np.arange(n), rng.integers(0, feature_dim - 1, size=n)] = 1.0
    x[:, -1] = 1.0
    return GraphData(n, edges, x, graph_label=label)


def toy_dataset(rng, n_graphs=30, n_classes=2, feature_dim=3):
    """Graphs whose class sets their size, so a linear readout on sums can separate them."""
    graphs = []
    for i in range(n_graphs):
        c = i % n_classes
        graphs.append(random_graph(rng, n=3 + 4 * c + int(rng.integers(0, 2)), p=0.4,
                                   feature_dim=feature_dim, label=c))
    return Dataset(tuple(graphs), n_classes, name="toy")


def hand_model(G_I, G_R, alpha_i=0.01, alpha_r=0.01, a=0.2, T=2, m_bits=4, x_max=1.0,
               noise_seed=None, allow_unstable=False, fused=False):
    G_I = np.asarray(G_I, dtype=float)
    G_R = np.asarray(G_R, dtype=float)
    cfg = EsgnnConfig(
        h=G_R.shape[0], T=T, a=a, alpha_i=alpha_i, alpha_r=alpha_r,
        quant=QuantConfig(m_bits, 0.3, x_max), input_quant=QuantConfig(m_bits, 0.3, 1.0), fused=fused,
    )
    dev = DeviceModel(read_noise_std=0.01)
    return EsgnnModel(CrossbarArray(G_I, dev), CrossbarArray(G_R, dev), cfg,
                      noise_seed=noise_seed, allow_unstable=allow_unstable)


def eq1_oracle(G_I, G_R, graph, alpha_i, alpha_r, a, T, s0=None, quantize=None):
    """Dense float reference of the state recursion (optionally quantizing neighbour states)."""
    A = graph.adjacency.toarray()
    U = alpha_i * graph.features @ np.asarray(G_I).T
    S = np.zeros_like(U) if s0 is None else np.array(s0, dtype=float)
    traj = [S]
    for _ in range(T):
        Sq = S if quantize is None else quantize(S)
        S = a * S + (1 - a) * np.tanh(U + alpha_r * (A @ Sq) @ np.asarray(G_R).T)
        traj.append(S)
    return traj
