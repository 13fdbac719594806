import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cvcert.gaussian import (
    GaussianState,
    NumericalError,
    _psd_factor,
    displace,
    graph_state_covariance,
    nullifier_statistics,
    sample_nullifier_measurement,
    width_to_std,
)
from cvcert.graph import NoiseModel, combined_measurement_noise, new_weighted_graph, nullifier_coefficients, path_graph

PAIR = new_weighted_graph(2, [(1, 2, 1.0)])


def test_vacuum_covariance():
    state = graph_state_covariance(new_weighted_graph(1, []), 1.0)
    np.testing.assert_allclose(state.covariance, np.diag([0.5, 0.5]), atol=1e-15)
    assert np.all(state.mean == 0)


def test_squeezed_single_mode():
    state = graph_state_covariance(new_weighted_graph(1, []), 2.0)
    np.testing.assert_allclose(state.covariance, np.diag([2.0, 0.125]), atol=1e-15)


def test_pair_covariance_entries():
    cov = graph_state_covariance(PAIR, 1.0).covariance
    # ordering (x1, x2, p1, p2)
    assert cov[2, 2] == pytest.approx(1.0, abs=1e-15)
    assert cov[2, 1] == pytest.approx(0.5, abs=1e-15)


def _wavefunction_moment(f, sigma):
    """E[f(p1, x2)] for the CZ-entangled pair computed from the x-space wavefunction.

    psi(x1, x2) ~ exp(-(x1**2 + x2**2)/(2 sigma**2)) exp(i x1 x2); conditioned
    on x2 the momentum p1 is Gaussian with mean x2 and variance 1/(2 sigma**2).
    """
    var_x = sigma**2 / 2.0
    var_p = 1.0 / (2.0 * sigma**2)

    def integrand(p1, x2):
        return (
            f(p1, x2)
            * math.exp(-(x2**2) / (2 * var_x)) / math.sqrt(2 * math.pi * var_x)
            * math.exp(-((p1 - x2) ** 2) / (2 * var_p)) / math.sqrt(2 * math.pi * var_p)
        )

    lim = 12 * max(sigma, 1 / sigma)
    return integrate.dblquad(integrand, -lim, lim, -lim, lim, epsabs=1e-11)[0]


def test_pair_covariance_matches_wavefunction_moments():
    sigma = 1.3
    cov = graph_state_covariance(PAIR, sigma).covariance
    assert cov[2, 2] == pytest.approx(_wavefunction_moment(lambda p, x: p * p, sigma), abs=1e-8)
    assert cov[2, 1] == pytest.approx(_wavefunction_moment(lambda p, x: p * x, sigma), abs=1e-8)


def test_nonpositive_squeezing():
    for bad in (0.0, -1.0, math.inf):
        with pytest.raises(ValueError):
            graph_state_covariance(PAIR, bad)


@pytest.mark.parametrize("graph", [PAIR, path_graph(4, 0.7), new_weighted_graph(3, [(1, 2, 2.0), (1, 3, -1.0)])])
@pytest.mark.parametrize("sigma", [0.3, 1.0, 5.0])
def test_honest_nullifier_width(graph, sigma):
    state = graph_state_covariance(graph, sigma)
    for i in range(1, graph.n + 1):
        mean, width = nullifier_statistics(state, nullifier_coefficients(graph, i))
        assert mean == 0.0
        assert width == pytest.approx(1.0 / sigma, rel=1e-12)


def test_near_ideal_width():
    state = graph_state_covariance(PAIR, 1e6)
    _, width = nullifier_statistics(state, nullifier_coefficients(PAIR, 1))
    assert width == pytest.approx(1e-6, rel=1e-6)


def test_displacement_moves_only_its_nullifier():
    state = displace(graph_state_covariance(PAIR, 1.0), [1.0, 0.0])
    m1, w1 = nullifier_statistics(state, nullifier_coefficients(PAIR, 1))
    m2, _ = nullifier_statistics(state, nullifier_coefficients(PAIR, 2))
    assert (m1, m2) == (pytest.approx(1.0), pytest.approx(0.0))
    assert w1 == pytest.approx(1.0)


def test_displacement_identity_and_inverse():
    state = graph_state_covariance(path_graph(3), 2.0)
    s = np.array([0.3, -1.2, 4.0])
    assert np.array_equal(displace(state, np.zeros(3)).mean, state.mean)
    back = displace(displace(state, s), -s)
    np.testing.assert_allclose(back.mean, state.mean, atol=1e-12)
    np.testing.assert_array_equal(back.covariance, state.covariance)


def test_displacement_length_mismatch():
    with pytest.raises(ValueError):
        displace(graph_state_covariance(PAIR, 1.0), [1.0])


def test_asymmetric_covariance_rejected():
    with pytest.raises(ValueError):
        GaussianState(1, np.zeros(2), np.array([[1.0, 0.1], [0.0, 1.0]]))


def test_uncertainty_violation_detected():
    assert not GaussianState(1, np.zeros(2), np.diag([0.1, 0.1])).satisfies_uncertainty()


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 5),
    st.floats(0.1, 10.0),
    st.lists(st.floats(-5, 5), min_size=5, max_size=5),
    st.floats(-2, 2).filter(lambda w: abs(w) > 1e-3),
)
def test_uncertainty_invariant(n, sigma, shift, weight):
    g = path_graph(n, weight)
    state = graph_state_covariance(g, sigma)
    assert state.satisfies_uncertainty()
    assert displace(state, shift[:n]).satisfies_uncertainty()


def test_psd_factor_clamps_tiny_negative():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-12 * np.eye(2)
    factor = _psd_factor(cov)
    np.testing.assert_allclose(factor @ factor.T, cov, atol=1e-9)


def test_psd_factor_rejects_negative():
    with pytest.raises(NumericalError):
        _psd_factor(np.diag([1.0, -1e-3]))


def test_sampling_matches_marginal_ks():
    g = new_weighted_graph(3, [(1, 2, 1.0), (1, 3, 0.5)])
    sigma, noise = 2.0, NoiseModel(0.2, 0.3)
    state = graph_state_covariance(g, sigma)
    spec = nullifier_coefficients(g, 1)
    draws = sample_nullifier_measurement(state, spec, noise, np.random.default_rng(11), size=100_000)
    width = math.sqrt(1 / sigma**2 + combined_measurement_noise(g, 1, noise) ** 2)
    assert stats.kstest(draws, "norm", args=(0.0, width_to_std(width))).pvalue > 0.01


@pytest.mark.parametrize(
    "graph, sigma, noise",
    [
        (PAIR, 1.0, NoiseModel()),
        (path_graph(4, 1.5), 0.5, NoiseModel(0.1, 0.4)),
        (new_weighted_graph(3, [(1, 2, -2.0), (2, 3, 1.0), (1, 3, 0.3)]), 3.0, NoiseModel(0.5, 0.0)),
    ],
)
def test_local_and_global_noise_pictures_agree(graph, sigma, noise):
    state = displace(graph_state_covariance(graph, sigma), np.linspace(-1, 1, graph.n))
    rng = np.random.default_rng(2024)
    for i in range(1, graph.n + 1):
        spec = nullifier_coefficients(graph, i)
        local = sample_nullifier_measurement(state, spec, noise, rng, size=100_000)
        mean, width = nullifier_statistics(state, spec)
        total = math.hypot(width, combined_measurement_noise(graph, i, noise))
        direct = rng.normal(mean, width_to_std(total), size=100_000)
        assert stats.ks_2samp(local, direct).pvalue > 0.01


def test_near_ideal_samples_vanish():
    state = graph_state_covariance(PAIR, 1e6)
    draws = sample_nullifier_measurement(state, nullifier_coefficients(PAIR, 2), NoiseModel(), np.random.default_rng(0), 10_000)
    assert np.max(np.abs(draws)) < 1e-4


def test_displaced_sample_mean():
    state = displace(graph_state_covariance(PAIR, 1.0), [3.0, 0.0])
    draws = sample_nullifier_measurement(state, nullifier_coefficients(PAIR, 1), NoiseModel(0.2, 0.2), np.random.default_rng(5), 50_000)
    se = draws.std() / math.sqrt(draws.size)
    assert abs(draws.mean() - 3.0) < 5 * se


def test_sampling_deterministic():
    state = graph_state_covariance(path_graph(3), 1.5)
    spec = nullifier_coefficients(path_graph(3), 2)
    a = sample_nullifier_measurement(state, spec, NoiseModel(0.1, 0.1), np.random.default_rng(9), 1000)
    b = sample_nullifier_measurement(state, spec, NoiseModel(0.1, 0.1), np.random.default_rng(9), 1000)
    assert np.array_equal(a, b)


def test_scalar_draw_and_bad_vertex():
    state = graph_state_covariance(PAIR, 1.0)
    value = sample_nullifier_measurement(state, nullifier_coefficients(PAIR, 1), NoiseModel(), np.random.default_rng(0))
    assert isinstance(value, float)
    bad = nullifier_coefficients(path_graph(3), 3)
    with pytest.raises(IndexError):
        sample_nullifier_measurement(state, bad, NoiseModel(), np.random.default_rng(0))


def test_quadrature_and_direct_nullifier_sampling_agree():
    g = path_graph(3, 1.2)
    state = graph_state_covariance(g, 1.7)
    spec = nullifier_coefficients(g, 2)
    from cvcert.gaussian import NullifierSampler

    sampler = NullifierSampler(state, spec, NoiseModel(0.3, 0.1))
    combined = sampler.sample_quadratures(np.random.default_rng(4), 1000) @ np.array([1.0, -1.2, -1.2])
    direct = sampler.sample(np.random.default_rng(4), 1000)
    np.testing.assert_allclose(combined, direct, atol=1e-12)


def test_cholesky_path_without_factor():
    g = path_graph(3, 1.0)
    full = graph_state_covariance(g, 1.5)
    bare = GaussianState(3, full.mean, full.covariance)
    spec = nullifier_coefficients(g, 2)
    assert nullifier_statistics(bare, spec)[1] == pytest.approx(1 / 1.5, rel=1e-10)
    draws = sample_nullifier_measurement(bare, spec, NoiseModel(), np.random.default_rng(1), 50_000)
    assert stats.kstest(draws, "norm", args=(0.0, width_to_std(1 / 1.5))).pvalue > 0.01
