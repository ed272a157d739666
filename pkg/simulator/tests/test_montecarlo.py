import numpy as np
import pytest

from module.markov_module import consumption_energy
from module.montecarlo_module import (
    RunResult, RunningMoments, build_deployment, deployment_streams, empirical_cdf,
    empirical_statistics, interval_streams, ks_distance, median_energy_user, quadform_oracle, rf_power_oracle,
    run, simulate_interval,
)
from module.config_module import deployment_hash
from module.topology_module import topology_to_file
from utils import save_json

# ------------- streams -------------------------------------
def test_interval_streams_are_pure_functions():
    a = interval_streams(7, 0, 12).fading.standard_normal(4)
    b = interval_streams(7, 0, 12).fading.standard_normal(4)
    c = interval_streams(7, 0, 13).fading.standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)

def test_topologies_get_distinct_streams():
    a = deployment_streams(7, 0).placement.random(3)
    b = deployment_streams(7, 1).placement.random(3)
    assert not np.array_equal(a, b)

# ------------- moments -------------------------------------
def test_running_moments_merge_is_order_independent():
    x = np.random.default_rng(0).gamma(2.0, 1.5, size=(1000, 3))
    whole = RunningMoments.from_samples(x)
    forward = RunningMoments((3,))
    for part in np.array_split(x, 7):
        forward.update(part)
    backward = RunningMoments((3,))
    for part in reversed(np.array_split(x, 3)):
        backward.update(part)
    for merged in (forward, backward):
        assert merged.count == 1000
        for name in ("mean", "m2", "m3", "m4"):
            np.testing.assert_allclose(getattr(merged, name), getattr(whole, name), rtol=1e-9)

def test_running_moments_statistics():
    x = np.random.default_rng(1).standard_normal(50_000)
    m = RunningMoments.from_samples(x)
    assert m.variance == pytest.approx(np.var(x, ddof=1))
    assert m.standard_error == pytest.approx(np.sqrt(np.var(x, ddof=1) / x.size))
    # normal: m4 - s^4 = 2 s^4
    assert m.variance_standard_error == pytest.approx(np.sqrt(2.0 / x.size), rel=0.05)

def test_empty_moments():
    m = RunningMoments((2,))
    assert m.count == 0
    assert not m.variance.any()

# ------------- engine --------------------------------------
@pytest.mark.parametrize("workers", [2, 4, 8])
def test_run_is_deterministic_across_workers(small_config, workers):
    one = run(small_config, 24, workers=1)
    many = run(small_config, 24, workers=workers)
    assert np.array_equal(one.I, many.I)
    assert np.array_equal(one.E, many.E)
    assert np.array_equal(one.dE, many.dE)
    assert one.metadata["config_hash"] == many.metadata["config_hash"]

def test_run_matches_single_intervals(small_config):
    dep = build_deployment(small_config)
    result = run(small_config, 5, deployment=dep)
    I, E = simulate_interval(dep, 3)
    assert np.array_equal(result.I[3], I)
    assert np.array_equal(result.E[3], E)

def test_seed_changes_samples(small_config):
    other = small_config.model_copy(update={"seed": small_config.seed + 1})
    assert not np.array_equal(run(small_config, 3).I, run(other, 3).I)

def test_energy_differential(small_config):
    result = run(small_config, 4)
    np.testing.assert_allclose(result.dE, result.E - consumption_energy(small_config))
    assert result.intervals == 4
    assert np.all(result.E >= 0)

def test_zero_intervals(small_config):
    result = run(small_config, 0)
    assert result.I.shape == (0, small_config.K)

def test_deployment_reload_from_file(tmp_path, small_config):
    dep = build_deployment(small_config, topology_id=2)
    tf = topology_to_file(dep.topology, dep.ls, deployment_hash(small_config))
    path = save_json(tf.model_dump(), tmp_path / "topology.json")
    again = build_deployment(small_config, topology_id=2, topology_file=path)
    for name in ("zeta", "beta", "gamma", "alpha", "los"):
        assert np.array_equal(getattr(again.ls, name), getattr(dep.ls, name)), name
    assert np.array_equal(run(small_config, 3, topology_id=2, deployment=again).I,
                          run(small_config, 3, topology_id=2, deployment=dep).I)

def test_deployment_reload_checks_antennas(tmp_path, small_config):
    dep = build_deployment(small_config)
    tf = topology_to_file(dep.topology, dep.ls, deployment_hash(small_config))
    path = save_json(tf.model_dump(), tmp_path / "topology.json")
    with pytest.raises(ValueError):
        build_deployment(small_config.model_copy(update={"N": 8}), topology_file=path)

def test_empirical_statistics(small_config):
    stats = empirical_statistics(run(small_config, 50))
    assert stats.provenance == "empirical"
    assert stats.mean_E.shape == (small_config.K,)
    with pytest.raises(ValueError):
        empirical_statistics(run(small_config, 1))

# ------------- distributions -------------------------------
def test_empirical_cdf():
    cdf = empirical_cdf(np.array([3.0, 1.0, 2.0, 2.0]))
    assert cdf(0.5) == 0.0
    assert cdf(2.0) == 0.75
    assert cdf(10.0) == 1.0
    with pytest.raises(ValueError):
        empirical_cdf(np.array([]))

def test_ks_distance_small_for_matching_model():
    x = np.random.default_rng(3).uniform(size=20_000)
    assert ks_distance(x, lambda v: np.clip(v, 0.0, 1.0)) < 0.02
    assert ks_distance(x, lambda v: np.clip(v, 0.0, 1.0) ** 2) > 0.2

def test_median_energy_user():
    E = np.array([[3.0, 1.0, 2.0, 5.0]] * 2)
    result = RunResult(I=E, E=E, dE=E)
    # means 3, 1, 2, 5: lower median of four is 2 (UE 2)
    assert median_energy_user(result) == 2

# ------------- oracles -------------------------------------
def test_oracles_need_enough_draws(shared_pilot_instance):
    ls, pilots, pc = shared_pilot_instance
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        quadform_oracle(ls, pilots, 0, 0, 0, 0, 9_999, rng)
    with pytest.raises(ValueError):
        rf_power_oracle(ls, pilots, pc, 100, rng)

def test_oracle_standard_error_shrinks(shared_pilot_instance):
    ls, pilots, _ = shared_pilot_instance
    small = quadform_oracle(ls, pilots, 0, 0, 0, 0, 20_000, np.random.default_rng(1))
    large = quadform_oracle(ls, pilots, 0, 0, 0, 0, 80_000, np.random.default_rng(2))
    assert large.standard_error ** 2 == pytest.approx(small.standard_error ** 2 / 4, rel=0.2)
