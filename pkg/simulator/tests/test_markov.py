import logging
import math

import numpy as np
import pytest

from module.closedform_module import HarvestStatistics
from module.markov_module import (
    DegenerateFitError, EnergyChain, build_energy_chain, consumption_energy, energy_state, gamma_fit,
    harvest_cdf, n_step_distribution, n_step_transition_summary, negative_transition_prob, point_mass,
    simulate_energy_trajectory, simulate_trajectories, state_center, state_change_frequencies,
    transition_matrix, transition_triple, uniform_distribution,
)
from module.schema_json import SystemConfig

def _chain(p_down, p_stay, p_up, M=50, E_f=1.0):
    return EnergyChain(
        M=M, E_f=E_f, E_C=0.0,
        p_down=np.array([p_down]), p_stay=np.array([p_stay]), p_up=np.array([p_up]),
        mean_dE=np.array([0.0]), neg_prob=np.array([p_down]),
    )

# ------------- Gamma layer ---------------------------------
def test_gamma_fit_matches_moments():
    fit = gamma_fit(2e-9, 5e-19)
    assert fit.mean == pytest.approx(2e-9)
    assert fit.variance == pytest.approx(5e-19)

@pytest.mark.parametrize("mean, var", [(0.0, 1.0), (-1.0, 1.0), (1.0, -1.0)])
def test_gamma_fit_degenerate(mean, var):
    with pytest.raises(DegenerateFitError):
        gamma_fit(mean, var)

def test_zero_variance_is_point_mass(caplog):
    with caplog.at_level(logging.WARNING):
        fit = gamma_fit(2e-3, 0.0)
    assert "point mass" in caplog.text
    assert fit.mean == 2e-3 and fit.variance == 0.0
    np.testing.assert_array_equal(harvest_cdf(np.array([1e-3, 2e-3, 3e-3]), fit), [0.0, 1.0, 1.0])
    assert negative_transition_prob(fit, 0.0) == 0.0

def test_harvest_cdf_limits():
    fit = gamma_fit(1.0, 1.0)  # exponential, theta = 1
    assert harvest_cdf(0.0, fit) == 0.0
    assert harvest_cdf(-3.0, fit) == 0.0
    assert harvest_cdf(1.0, fit) == pytest.approx(1.0 - math.exp(-1.0))
    assert harvest_cdf(1e3, fit) == pytest.approx(1.0)

def test_consumption_energy():
    config = SystemConfig(tau_p=20, P_p=0.01, tau_u=0)
    assert consumption_energy(config) == pytest.approx(2e-4)
    assert consumption_energy(SystemConfig(P_p=0.0, P_u=0.0)) == 0.0
    assert consumption_energy(SystemConfig(P_p=0.2, P_u=0.2)) == pytest.approx(2 * consumption_energy(SystemConfig()))

def test_negative_transition_prob_limits():
    fit = gamma_fit(1e-6, 1e-13)
    assert negative_transition_prob(fit, 0.0) == 0.0
    assert negative_transition_prob(fit, 1.0) == pytest.approx(1.0)

# ------------- transition triple ---------------------------
def test_zero_drift_stays_put():
    t = transition_triple(gamma_fit(1.0, 1.0), 0.5, 0.0, 2000, 0.3)
    assert (t.p_down, t.p_stay, t.p_up) == (0.0, 1.0, 0.0)

def test_certain_gain_limit():
    mean_dE = 0.004 * 0.3 / 2000
    t = transition_triple(gamma_fit(1e-6, 1e-13), 0.0, mean_dE, 2000, 0.3)
    assert t.p_down == 0.0
    assert t.p_stay == pytest.approx(0.996)
    assert t.p_up == pytest.approx(0.004)

def test_large_drift_warns_and_clamps(caplog):
    with caplog.at_level(logging.WARNING):
        t = transition_triple(gamma_fit(1.0, 1.0), 10.0, -5.0, 10, 1.0)
    assert "exceeds 0.1" in caplog.text
    assert t.p_stay == 0.0
    assert t.p_down + t.p_up == pytest.approx(1.0)

def test_triple_rejects_bad_chain():
    with pytest.raises(ValueError):
        transition_triple(gamma_fit(1.0, 1.0), 0.0, 0.0, 1, 1.0)

def test_build_energy_chain_routes_losses_down():
    config = SystemConfig(P_p=0.1, P_u=0.1)
    stats = HarvestStatistics(
        mean_I=np.array([1e-3, 1e-3]), var_I=np.array([1e-7, 1e-7]),
        mean_E=np.array([1e-3, 1e-2]), var_E=np.array([1e-8, 1e-8]), provenance="analytical",
    )
    chain = build_energy_chain(stats, config)
    # E_C = 6 mJ: UE 0 mostly loses, UE 1 mostly gains
    assert chain.p_down[0] > chain.p_up[0]
    assert chain.p_up[1] > chain.p_down[1]
    np.testing.assert_allclose(chain.p_down + chain.p_stay + chain.p_up, 1.0)
    np.testing.assert_allclose(chain.mean_dE, stats.mean_E - consumption_energy(config))

def test_build_energy_chain_with_vanishing_variance():
    config = SystemConfig(P_p=0.1, P_u=0.1)  # E_C = 6 mJ
    stats = HarvestStatistics(
        mean_I=np.array([0.03, 0.03]), var_I=np.array([1e-6, 1e-6]),
        mean_E=np.array([1e-3, 1e-2]), var_E=np.array([0.0, 0.0]), provenance="analytical",
    )
    chain = build_energy_chain(stats, config)
    np.testing.assert_array_equal(chain.neg_prob, [1.0, 0.0])
    assert chain.p_up[0] == 0.0 and chain.p_down[0] > 0
    assert chain.p_down[1] == 0.0 and chain.p_up[1] > 0

# ------------- evolution -----------------------------------
def test_transition_matrix_rows_are_stochastic():
    P = transition_matrix(_chain(0.2, 0.5, 0.3), 0).toarray()
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert P[0, 0] == pytest.approx(0.7) and P[-1, -1] == pytest.approx(0.8)

def test_n_zero_is_identity():
    chain = _chain(0.2, 0.5, 0.3)
    pi0 = point_mass(50, 7)
    assert np.array_equal(n_step_distribution(chain, 0, pi0, 0).pi, pi0.pi)

def test_identity_chain_keeps_distribution():
    pi = n_step_distribution(_chain(0.0, 1.0, 0.0), 0, None, 100).pi
    np.testing.assert_allclose(pi, uniform_distribution(50).pi)

def test_deterministic_walk():
    pi = n_step_distribution(_chain(0.0, 0.0, 1.0), 0, point_mass(50, 1), 3).pi
    assert pi[3] == 1.0 and pi.sum() == 1.0

def test_long_evolution_conserves_mass():
    pi = n_step_distribution(_chain(0.25, 0.5, 0.25), 0, None, 10_000).pi
    assert pi.sum() == pytest.approx(1.0, abs=1e-9)

def test_negative_steps_rejected():
    with pytest.raises(ValueError):
        n_step_distribution(_chain(0.2, 0.5, 0.3), 0, None, -1)

def test_point_mass_bounds():
    with pytest.raises(ValueError):
        point_mass(5, 0)

def test_n_step_summary():
    t = n_step_transition_summary(_chain(0.1, 0.6, 0.3), 0, 25, 4)
    assert t.p_down + t.p_stay + t.p_up == pytest.approx(1.0)
    assert t.p_up > t.p_down

# ------------- trajectories --------------------------------
def test_energy_state_mapping():
    assert energy_state(0.0, 1.0, 10) == 1
    assert energy_state(1.0, 1.0, 10) == 10
    assert [int(energy_state(state_center(s, 1.0, 10), 1.0, 10)) for s in range(1, 11)] == list(range(1, 11))

def test_constant_trajectory_without_change():
    states = simulate_energy_trajectory(np.zeros(5), 0.45, 1.0, 10, 20, np.random.default_rng(0))
    assert np.all(states == 5)

def test_one_state_per_step_until_cap():
    states = simulate_energy_trajectory(np.full(3, 0.1), state_center(3, 1.0, 10), 1.0, 10, 10, np.random.default_rng(0))
    assert states.tolist() == [4, 5, 6, 7, 8, 9, 10, 10, 10, 10]

def test_trajectory_needs_samples_and_steps():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        simulate_energy_trajectory(np.array([]), 0.5, 1.0, 10, 5, rng)
    with pytest.raises(ValueError):
        simulate_energy_trajectory(np.zeros(3), 0.5, 1.0, 10, 0, rng)

def test_batched_trajectories_shape():
    paths = simulate_trajectories(np.array([-0.1, 0.1]), np.full(8, 0.5), 1.0, 10, 6, np.random.default_rng(1))
    assert paths.shape == (8, 6)
    assert paths.min() >= 1 and paths.max() <= 10

def test_state_change_frequencies():
    freq = state_change_frequencies(np.array([3, 3, 2, 3]), start_state=2)
    assert (freq.p_down, freq.p_stay, freq.p_up) == (0.25, 0.25, 0.5)

def test_five_state_chain_matches_trajectories():
    # whole-state jumps make the continuous process exactly the chain
    M, E_f, runs = 5, 5.0, 20_000
    jumps = np.array([-1.0] * 3 + [0.0] * 11 + [1.0] * 6)
    chain = _chain(0.15, 0.55, 0.30, M=M, E_f=E_f)
    paths = simulate_trajectories(jumps, np.full(runs, state_center(3, E_f, M)), E_f, M, 3, np.random.default_rng(4))
    for n in (1, 2, 3):
        pi = n_step_distribution(chain, 0, point_mass(M, 3), n).pi
        freq = np.array([np.mean(paths[:, n - 1] == s) for s in range(1, M + 1)])
        se = np.sqrt(pi * (1 - pi) / runs) + 1.0 / runs
        assert np.all(np.abs(freq - pi) < 5 * se)
