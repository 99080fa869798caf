import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from esgnn.device import (
    CrossbarArray,
    DeviceModel,
    QuantConfig,
    VmmStats,
    analog_vmm,
    analog_vmm_batch,
    form_random_array,
    load_array,
    save_array,
    quantization_error_bound,
    quantize,
    spectral_radius,
    vmm_moments,
)
from esgnn.exceptions import ConfigurationError, NumericalError, ShapeError


# form_random_array ---------------------------------------------------------
def test_no_breakdown_gives_g_off():
    m = DeviceModel(p_break=0.0)
    arr = form_random_array(4, 4, m, seed=1)
    assert np.all(arr.conductance == m.g_off)


def test_full_breakdown_degenerate_distribution():
    m = DeviceModel(p_break=1.0, g_on_mean=150.0, g_on_std=0.0, g_off=1.0)
    arr = form_random_array(4, 4, m, seed=1)
    assert np.all(arr.conductance == 150.0)


def test_on_fraction_binomial_oracle():
    # P(|K/10000 - 0.5| > 0.05) for K ~ Bin(10000, 0.5) is astronomically small,
    # so the 0.997 coverage claim holds for every seed we try.
    n = 100 * 100
    tail = sps.binom.cdf(4499, n, 0.5) + sps.binom.sf(5500, n, 0.5)
    assert 1 - tail > 0.997
    for seed in range(20):
        arr = form_random_array(100, 100, DeviceModel(p_break=0.5), seed=seed)
        assert 0.45 <= arr.on_fraction() <= 0.55


def test_determinism_bitwise():
    m = DeviceModel()
    a = form_random_array(30, 20, m, seed=42)
    b = form_random_array(30, 20, m, seed=42)
    c = form_random_array(30, 20, m, seed=43)
    assert a.conductance.tobytes() == b.conductance.tobytes()
    assert not np.array_equal(a.conductance, c.conductance)


def test_entries_nonnegative_and_above_g_off():
    m = DeviceModel(p_break=0.7, g_on_mean=4.0, g_on_std=1.0, g_off=0.5)
    arr = form_random_array(64, 64, m, seed=3)
    assert np.all(arr.conductance >= m.g_off)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"p_break": 1.5},
        {"p_break": -0.1},
        {"g_on_mean": 1.0, "g_on_std": 1.0, "g_off": 0.5},  # no conductance gap
        {"g_on_std": -1.0},
        {"read_noise_std": -0.01},
    ],
)
def test_invalid_model(kwargs):
    with pytest.raises(ConfigurationError):
        DeviceModel(**kwargs)


@pytest.mark.parametrize("rows,cols", [(0, 4), (4, 0), (-1, 2)])
def test_invalid_dimensions(rows, cols):
    with pytest.raises(ConfigurationError):
        form_random_array(rows, cols, DeviceModel(), seed=0)


def test_on_state_histogram_normality():
    m = DeviceModel(p_break=0.5, g_on_mean=150.0, g_on_std=30.0, g_off=1.0)
    arr = form_random_array(512, 512, m, seed=0)
    on = arr.conductance[arr.conductance > m.g_off]
    within = np.mean(np.abs(on - m.g_on_mean) <= 3 * m.g_on_std)
    assert within >= 0.99
    assert abs(on.mean() - m.g_on_mean) < 0.5
    assert abs(on.std() - m.g_on_std) < 0.5


# analog_vmm ----------------------------------------------------------------
def test_zero_input_gives_zero():
    arr = form_random_array(5, 7, DeviceModel(), seed=0)
    assert np.all(analog_vmm(arr, np.zeros(7)) == 0.0)
    assert np.all(analog_vmm(arr, np.zeros(7), noise_seed=1) == 0.0)


def test_identity_pattern_selects_column():
    arr = CrossbarArray(np.array([[100.0, 0.0], [0.0, 100.0]]))
    q = QuantConfig(4, 0.3, 0.5)
    np.testing.assert_allclose(analog_vmm(arr, np.array([0.5, 0.0]), q), [50.0, 0.0], rtol=1e-12)


def test_length_mismatch():
    arr = form_random_array(3, 4, DeviceModel(), seed=0)
    with pytest.raises(ShapeError):
        analog_vmm(arr, np.zeros(3))
    with pytest.raises(ShapeError):
        vmm_moments(arr, np.zeros((2, 3)))


@pytest.mark.parametrize("m_bits", [2, 4, 6, 8])
def test_quantization_error_bound_1000_pairs(m_bits):
    rng = np.random.default_rng(m_bits)
    q = QuantConfig(m_bits, 0.3, 1.0)
    worst = 0.0
    for _ in range(1000):
        G = CrossbarArray(rng.uniform(0, 200, size=(4, 4)))
        x = rng.uniform(0, 1, size=4)
        err = np.max(np.abs(analog_vmm(G, x, q) - G.conductance @ x))
        spec_bound = G.conductance.sum(axis=1).max() * q.x_max / q.levels
        assert err <= spec_bound * (1 + 1e-12)
        assert err <= quantization_error_bound(G, q) * (1 + 1e-12) + 1e-12
        worst = max(worst, err / spec_bound)
    assert worst > 0


def test_noise_off_exact_on_grid():
    rng = np.random.default_rng(5)
    q = QuantConfig(6, 0.3, 2.0)
    for _ in range(50):
        G = CrossbarArray(rng.uniform(0, 200, size=(6, 9)))
        x = rng.integers(0, q.levels + 1, size=9) * q.step
        np.testing.assert_allclose(analog_vmm(G, x, q), G.conductance @ x, rtol=1e-12, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_nonnegative_outputs(seed):
    rng = np.random.default_rng(seed)
    G = CrossbarArray(rng.uniform(0, 50, size=(3, 5)))
    out = analog_vmm(G, rng.uniform(-0.5, 1.5, size=5))
    assert np.all(out >= 0)


def test_error_bound_monotone_in_bits():
    G = form_random_array(10, 10, DeviceModel(), seed=0)
    bounds = [quantization_error_bound(G, QuantConfig(m, 0.3, 1.0)) for m in range(1, 12)]
    assert all(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:]))


def test_clamp_counter_and_ties_round_up():
    q = QuantConfig(2, 0.3, 3.0)  # step 1.0
    stats = VmmStats()
    codes = quantize(np.array([-1.0, 0.5, 1.5, 2.49, 4.0]), q, stats)
    assert codes.tolist() == [0, 1, 2, 2, 3]
    assert stats.clamped == 2


def test_batch_matches_single_without_noise():
    rng = np.random.default_rng(0)
    G = form_random_array(8, 5, DeviceModel(), seed=1)
    X = rng.uniform(0, 1, size=(7, 5))
    single = np.stack([analog_vmm(G, x) for x in X])
    np.testing.assert_allclose(analog_vmm_batch(G, X), single, rtol=1e-12)


def test_noise_variance_matches_literal_per_read_model():
    """The moment-matched batch noise has the variance of the literal per-term model."""
    m = DeviceModel(read_noise_std=0.05)
    G = form_random_array(3, 6, m, seed=2)
    q = QuantConfig(4, 0.3, 1.0)
    x = np.array([0.2, 0.9, 0.0, 0.5, 1.0, 0.33])
    samples = np.stack([analog_vmm(G, x, q, noise_seed=s) for s in range(4000)])
    mean, var = vmm_moments(G, x[None, :], q)
    np.testing.assert_allclose(samples.mean(axis=0), mean[0], rtol=2e-3)
    np.testing.assert_allclose(samples.var(axis=0), var[0], rtol=0.1)


def test_noise_is_seeded():
    G = form_random_array(4, 4, DeviceModel(), seed=0)
    x = np.full(4, 0.5)
    assert np.array_equal(analog_vmm(G, x, noise_seed=3), analog_vmm(G, x, noise_seed=3))
    assert not np.array_equal(analog_vmm(G, x, noise_seed=3), analog_vmm(G, x, noise_seed=4))


def test_instrumented_macs():
    G = form_random_array(4, 6, DeviceModel(), seed=0)
    stats = VmmStats()
    vmm_moments(G, np.zeros((5, 6)), QuantConfig(4), stats)
    assert stats.macs == 5 * 4 * 6
    assert stats.reads == 5 * 4


# spectral_radius -----------------------------------------------------------
def test_spectral_radius_zero():
    assert spectral_radius(CrossbarArray(np.zeros((5, 5)))) == 0.0


def test_spectral_radius_diagonal():
    assert spectral_radius(CrossbarArray(2.0 * np.eye(6)), scale=1.0) == pytest.approx(2.0, rel=1e-10)


def test_spectral_radius_vs_dense_oracle_50_matrices():
    rng = np.random.default_rng(11)
    for i in range(50):
        n = int(rng.integers(2, 60))
        G = rng.uniform(0, 1, size=(n, n)) * (rng.random((n, n)) < rng.uniform(0.1, 1.0))
        scale = float(rng.uniform(0.01, 2.0))
        oracle = np.max(np.abs(np.linalg.eigvals(scale * G)))
        got = spectral_radius(CrossbarArray(G), scale=scale)
        assert got == pytest.approx(oracle, rel=1e-6, abs=1e-12), i


def test_spectral_radius_periodic_matrix():
    # permutation matrix: eigenvalues on the unit circle with equal modulus
    P = np.roll(np.eye(5), 1, axis=1)
    assert spectral_radius(CrossbarArray(P)) == pytest.approx(1.0, rel=1e-8)


def test_spectral_radius_non_square():
    with pytest.raises(ShapeError):
        spectral_radius(CrossbarArray(np.ones((3, 4))))


def test_spectral_radius_non_convergence_reports_iterate():
    G = np.random.default_rng(0).uniform(0, 1, size=(20, 20))
    with pytest.raises(NumericalError) as exc:
        spectral_radius(CrossbarArray(G), max_iter=1)
    assert exc.value.iterate is not None and exc.value.iterate.shape == (20,)


def test_constant_matrix_radius():
    m = DeviceModel(p_break=0.0)
    arr = form_random_array(50, 50, m, seed=0)
    assert spectral_radius(arr, 0.006) == pytest.approx(0.006 * m.g_off * 50, rel=1e-8)


# serialization -------------------------------------------------------------
def test_save_load_round_trip(tmp_path):
    arr = form_random_array(7, 3, DeviceModel(), seed=9)
    path, sidecar = save_array(arr, tmp_path / "g.csv")
    assert sidecar.exists()
    back = load_array(path)
    np.testing.assert_allclose(back.conductance, arr.conductance, rtol=1e-8)
    assert back.device == arr.device and back.seed == 9


def test_array_rejects_negative():
    with pytest.raises(ConfigurationError):
        CrossbarArray(np.array([[1.0, -1.0]]))
