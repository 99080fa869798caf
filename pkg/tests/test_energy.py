import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_graph
from esgnn.device import DeviceModel, VmmStats
from esgnn.energy import (
    EnergyModel,
    GraphStats,
    OpCounter,
    calibrate,
    count_ops,
    count_training_ops,
    energy_report,
)
from esgnn.exceptions import ConfigurationError
from esgnn.graphdata import disjoint_union
from esgnn.model import EsgnnConfig, EsgnnModel
from esgnn.readout import fit_linear

CORA_STATS = GraphStats(num_graphs=1, total_nodes=2708, total_messages=2 * 5278, feature_dim=1434)
CORA_CFG = EsgnnConfig(h=1000, T=2)
MUTAG_CFG = EsgnnConfig(h=50, T=4)


def test_cora_closed_form_counts():
    c = count_ops(CORA_STATS, CORA_CFG, "graphconv", 7)
    assert c.input_projection == 2 * 1000 * 1434 * 2708 == 7_766_544_000
    assert c.recursion == 2 * 10**6 * 10556 * 2 == 42_224_000_000
    assert c.readout_inference == 2 * (1000 * 7 * 2708 + 7 * (10556 + 2708))
    assert c.forward == c.input_projection + c.recursion + c.readout_inference


def test_cora_counts_from_parsed_graph(cora_files):
    from esgnn.graphdata import parse_cora

    g, _ = parse_cora(*cora_files)
    assert count_ops([g], CORA_CFG, "graphconv", 7) == count_ops(CORA_STATS, CORA_CFG, "graphconv", 7)


def test_empty_dataset_zero():
    c = count_ops([], MUTAG_CFG)
    assert c.total == 0 and c.forward == 0
    rep = energy_report(OpCounter(), EnergyModel())
    assert rep["digital_forward_energy_J"] == 0 and rep["analog_forward_energy_J"] == 0 and rep["ratio"] is None


def test_mutag_training_ops_formula():
    ops = count_training_ops(GraphStats(188, 0, 0, 8), MUTAG_CFG, "linear", 2).readout_training
    assert ops == 2 * 188 * 51**2 + (2 * 51**3) // 3 + 2 * 188 * 51 * 2
    assert abs(ops - 1.0e6) / 1.0e6 <= 0.15


def test_zero_samples_degenerate():
    c = count_training_ops(GraphStats(0, 0, 0, 8), MUTAG_CFG, "linear", 2)
    assert c.degenerate and c.readout_training == (2 * 51**3) // 3


def test_training_formula_vs_instrumented_fit():
    rng = np.random.default_rng(0)
    h, N = 200, 10
    r = fit_linear(rng.random((N, h)), rng.integers(0, 2, N), n_classes=2)
    instrumented = sum(r.ops.values())
    formula = count_training_ops(GraphStats(N, 0, 0, 3), EsgnnConfig(h=h), "linear", 2, n_train=N).readout_training
    assert abs(formula - instrumented) / instrumented <= 0.05


def test_graphconv_training_ops():
    c = count_training_ops(CORA_STATS, CORA_CFG, "graphconv", 7, epochs=200)
    assert c.readout_training == 3 * 200 * count_ops(CORA_STATS, CORA_CFG, "graphconv", 7).readout_inference


@given(st.integers(0, 2**32 - 1))
def test_disjoint_union_additivity(seed):
    rng = np.random.default_rng(seed)
    a = [random_graph(rng, self_loops=True) for _ in range(3)]
    b = [random_graph(rng, self_loops=True) for _ in range(2)]
    cfg = EsgnnConfig(h=5, T=3)
    assert count_ops(a + b, cfg) == count_ops(a, cfg) + count_ops(b, cfg)
    # one graph that is the union of others: only the per-graph readout term differs
    u = count_ops([disjoint_union(a)], cfg)
    s = count_ops(a, cfg)
    assert (u.input_projection, u.recursion) == (s.input_projection, s.recursion)


def test_duplicated_dataset_scales_linearly():
    rng = np.random.default_rng(1)
    graphs = [random_graph(rng) for _ in range(6)]
    one = count_ops(graphs, MUTAG_CFG)
    three = count_ops(graphs * 3, MUTAG_CFG)
    for stage in ("input_projection", "recursion", "pooling_activation", "readout_inference"):
        assert getattr(three, stage) == 3 * getattr(one, stage)


def test_merge_associative_commutative():
    a, b, c = (OpCounter(*np.random.default_rng(i).integers(0, 100, 5).tolist()) for i in range(3))
    assert (a + b) + c == a + (b + c)
    assert a + b == b + a


def test_instrumented_macs_equal_closed_form():
    rng = np.random.default_rng(2)
    graphs = [random_graph(rng, n=int(rng.integers(1, 9)), p=0.4) for _ in range(15)]
    cfg = EsgnnConfig(h=6, T=4, alpha_i=0.05)
    m = EsgnnModel.random(cfg, 3, DeviceModel(), seed=0)
    stats = VmmStats()
    m.embed_dataset(graphs, stats=stats)
    c = count_ops(graphs, cfg)
    assert 2 * stats.macs == c.input_projection + c.recursion


def test_negative_count_rejected():
    with pytest.raises(ConfigurationError):
        OpCounter(recursion=-1)
    with pytest.raises(ConfigurationError):
        EnergyModel(e_analog_per_op=0.0)


def test_energy_linearity():
    c = OpCounter(10, 20, 5, 3, 7)
    m = EnergyModel(1e-12, 1e-14)
    r1 = energy_report(c, m)
    r2 = energy_report(c + c, m)
    r3 = energy_report(c, EnergyModel(2e-12, 2e-14))
    assert r2["digital_forward_energy_J"] == pytest.approx(2 * r1["digital_forward_energy_J"])
    assert r2["analog_forward_energy_J"] == pytest.approx(2 * r1["analog_forward_energy_J"])
    assert r3["analog_forward_energy_J"] == pytest.approx(2 * r1["analog_forward_energy_J"])
    assert r1["training_energy_J"] == pytest.approx(7e-12)


def test_cora_digital_energy():
    rep = energy_report(count_ops(CORA_STATS, CORA_CFG, "graphconv", 7), EnergyModel(e_digital_per_op=20.2e-12))
    assert rep["digital_forward_energy_J"] == pytest.approx(1.01, rel=0.01)


def test_cora_crossbar_energy_at_35_fj():
    rep = energy_report(count_ops(CORA_STATS, CORA_CFG, "graphconv", 7), EnergyModel(e_analog_per_op=35e-15))
    crossbar = sum(b["analog_energy_J"] for b in rep["breakdown"] if b["executor"] == "analog")
    assert crossbar == pytest.approx(1.77e-3, rel=0.02)


def test_breakdown_structure():
    rep = energy_report(count_ops(CORA_STATS, CORA_CFG, "graphconv", 7), EnergyModel())
    json.dumps(rep)
    stages = [b["stage"] for b in rep["breakdown"]]
    assert stages == ["input_projection", "recursion", "pooling_activation", "readout_inference", "readout_training"]
    for b in rep["breakdown"]:
        assert {"stage", "ops", "digital_energy_J", "analog_energy_J"} <= set(b)
    assert rep["label"] == "calibration self-consistency"


@pytest.mark.parametrize("target", [34.2, 93.2, 570.4])
def test_calibrate_round_trip(target):
    c = count_ops(CORA_STATS, CORA_CFG, "graphconv", 7)
    m = calibrate(c, target)
    assert energy_report(c, m)["ratio"] == pytest.approx(target, rel=1e-12)


def test_calibrate_unreachable():
    c = OpCounter(input_projection=1, recursion=1, readout_inference=1000)
    with pytest.raises(ConfigurationError):
        calibrate(c, 500.0)
