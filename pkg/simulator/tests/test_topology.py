import math

import numpy as np
import pytest

from module.channel_module import assign_pilots
from module.config_module import deployment_hash
from module.schema_json import RicianModel, SystemConfig, TopologyFile
from module.topology_module import (
    from_coefficients, from_fading, generate_topology, grid_positions, hata_constant, large_scale,
    path_loss_db, rician_k_factor, steering_vector, steering_vectors, topology_from_file, topology_to_file,
)

# ------------- placement -----------------------------------
def test_square_L_uses_grid():
    config = SystemConfig(L=4, K=6, N=2)
    topo = generate_topology(config, np.random.default_rng(0))
    assert topo.placement == "grid"
    assert sorted(map(tuple, topo.ap_positions.tolist())) == [(25.0, 25.0), (25.0, 75.0), (75.0, 25.0), (75.0, 75.0)]

def test_non_square_L_falls_back_to_random():
    config = SystemConfig(L=7, K=6, N=2)
    topo = generate_topology(config, np.random.default_rng(0))
    assert topo.placement == "random"
    assert topo.ap_positions.shape == (7, 2)
    assert np.all((topo.ap_positions >= 0) & (topo.ap_positions <= config.area_side))

def test_distances_include_height_difference():
    config = SystemConfig(L=9, K=20, N=2)
    topo = generate_topology(config, np.random.default_rng(1))
    assert topo.distances.shape == (20, 9)
    assert np.all(topo.distances >= config.ap_height - config.ue_height)

def test_topology_arrays_are_read_only():
    topo = generate_topology(SystemConfig(L=4, K=3, N=2), np.random.default_rng(2))
    with pytest.raises(ValueError):
        topo.distances[0, 0] = 1.0

def test_grid_positions_centered_in_cells():
    assert grid_positions(1, 100.0).tolist() == [[50.0, 50.0]]

# ------------- path loss -----------------------------------
def test_hata_constant_default():
    assert hata_constant(SystemConfig()) == pytest.approx(140.72, abs=0.01)

def test_path_loss_far_region_example():
    config = SystemConfig()
    assert path_loss_db(60.0, config) == pytest.approx(-hata_constant(config) - 35.0 * math.log10(0.06))

def test_path_loss_continuous_and_non_increasing():
    config = SystemConfig()
    d = np.linspace(1.0, 300.0, 3000)
    pl = path_loss_db(d, config)
    assert np.all(np.diff(pl) <= 1e-12)
    for edge in (config.d0, config.d1):
        assert path_loss_db(edge * (1 + 1e-9), config) == pytest.approx(path_loss_db(edge, config), abs=1e-6)

def test_path_loss_flat_below_d0():
    config = SystemConfig()
    assert path_loss_db(2.0, config) == path_loss_db(config.d0, config)

@pytest.mark.parametrize("d", [0.0, -5.0])
def test_path_loss_rejects_non_positive_distance(d):
    with pytest.raises(ValueError):
        path_loss_db(d, SystemConfig())

def test_shadowing_offsets_gain_exactly():
    config = SystemConfig(L=4, K=5, N=2)
    rng = np.random.default_rng(3)
    topo = generate_topology(config, rng)
    pilots = assign_pilots(config.K, config.tau_p)
    ls = large_scale(topo, config, np.random.default_rng(4), pilots)
    offset = 10.0 * np.log10(ls.zeta) - path_loss_db(topo.distances, config)
    np.testing.assert_allclose(offset, ls.shadowing_db, atol=1e-9)

def test_zero_shadowing_gives_deterministic_gain():
    config = SystemConfig(L=4, K=5, N=2, shadow_std_db=0.0)
    topo = generate_topology(config, np.random.default_rng(3))
    ls = large_scale(topo, config, np.random.default_rng(4), assign_pilots(config.K, config.tau_p))
    np.testing.assert_allclose(ls.zeta, 10.0 ** (path_loss_db(topo.distances, config) / 10.0), rtol=1e-12)

def test_rician_models():
    d = np.array([10.0, 100.0])
    np.testing.assert_allclose(rician_k_factor(d, SystemConfig()), 10.0 ** ((13.0 - 0.03 * d) / 10.0))
    constant = SystemConfig(rician=RicianModel(model="constant", k_factor=2.5))
    assert rician_k_factor(d, constant).tolist() == [2.5, 2.5]

# ------------- array response ------------------------------
def test_steering_vector_broadside_is_all_ones():
    np.testing.assert_allclose(steering_vector(0.0, 4), np.ones(4))

def test_steering_vectors_unit_modulus():
    h = steering_vectors(np.array([[0.3, -1.2]]), 5)
    assert h.shape == (1, 2, 5)
    np.testing.assert_allclose(np.abs(h), 1.0)

# ------------- large-scale model ---------------------------
def test_estimation_statistics(shared_pilot_instance):
    ls, _, _ = shared_pilot_instance
    np.testing.assert_allclose(ls.gamma + ls.upsilon, ls.beta)
    assert np.all(ls.gamma <= ls.beta)
    assert np.all(ls.alpha[[0, 1, 2], [0, 1, 2], :] == 1.0)
    assert np.all(ls.alpha[0, 1] == 0.0)
    np.testing.assert_allclose(ls.alpha[0, 2], ls.beta[0] / ls.beta[2])
    np.testing.assert_allclose(ls.zeta, ls.beta + ls.varsigma)

def test_pure_rayleigh_k_factor_is_zero(rayleigh_single):
    ls, _ = rayleigh_single
    assert ls.K_factor[0, 0] == 0.0
    assert ls.gamma[0, 0] == pytest.approx(0.5)

def test_permute_aps_reorders_columns(shared_pilot_instance):
    ls, _, _ = shared_pilot_instance
    swapped = ls.permute_aps([1, 0])
    np.testing.assert_allclose(swapped.gamma, ls.gamma[:, ::-1])
    np.testing.assert_allclose(swapped.alpha, ls.alpha[:, :, ::-1])

# ------------- serialization -------------------------------
def test_topology_file_reload_is_bit_exact():
    config = SystemConfig(L=4, K=6, N=3, tau_p=3)
    topo = generate_topology(config, np.random.default_rng(9))
    pilots = assign_pilots(config.K, config.tau_p)
    ls = large_scale(topo, config, np.random.default_rng(10), pilots)

    tf = TopologyFile.model_validate(topology_to_file(topo, ls, deployment_hash(config)).model_dump())
    topo2, fading = topology_from_file(tf, config)
    ls2 = from_fading(fading["zeta"], fading["K_factor"], fading["phi"], pilots, config, fading["shadowing_db"])

    assert np.array_equal(topo2.distances, topo.distances)
    for name in ("zeta", "K_factor", "beta", "gamma", "c", "los"):
        assert np.array_equal(getattr(ls2, name), getattr(ls, name)), name

def test_topology_file_shape_mismatch():
    config = SystemConfig(L=4, K=6, N=3)
    topo = generate_topology(config, np.random.default_rng(9))
    ls = large_scale(topo, config, np.random.default_rng(10), assign_pilots(6, 20))
    tf = topology_to_file(topo, ls, deployment_hash(config))
    with pytest.raises(ValueError):
        topology_from_file(tf, SystemConfig(L=9, K=6, N=3))

def _stored(config: SystemConfig) -> TopologyFile:
    topo = generate_topology(config, np.random.default_rng(9))
    ls = large_scale(topo, config, np.random.default_rng(10), assign_pilots(config.K, config.tau_p))
    return topology_to_file(topo, ls, deployment_hash(config))

def test_topology_file_from_other_config_is_rejected():
    config = SystemConfig(L=4, K=6, N=3)
    tf = _stored(config)
    with pytest.raises(ValueError, match="hashes to"):
        topology_from_file(tf, config.model_copy(update={"P_total": 5.0}))
    # a new seed replays the same deployment under fresh fading
    topology_from_file(tf, config.model_copy(update={"seed": 42}))

def test_topology_file_pilots_must_fit_tau_p():
    config = SystemConfig(L=4, K=6, N=3, tau_p=3)
    tf = _stored(config)
    with pytest.raises(ValueError, match="pilot_index"):
        topology_from_file(tf.model_copy(update={"pilot_index": [0, 1, 2, 3, 0, 1]}), config)
    with pytest.raises(ValueError, match="pilot_index"):
        topology_from_file(tf.model_copy(update={"pilot_index": [0, 1, 2]}), config)

def test_zero_beta_is_pure_los():
    ls = from_coefficients(np.array([[0.0]]), np.array([[1.0]]), np.array([[0.0]]), np.array([0]), 2, 1.0, 1.0)
    assert math.isinf(ls.K_factor[0, 0])
    assert ls.gamma[0, 0] == 0.0
