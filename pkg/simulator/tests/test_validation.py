import numpy as np
import pytest
from scipy.special import gammainc

from module.schema_json import EhCircuit, OracleSettings
from module.validation_module import (
    _finalize, incomplete_gamma_check, logistic_checks, markov_checks, random_small_instance,
    regularized_gamma_reference, report_frame, run_validation, sidak_z, write_report,
)
from utils import read_csv

QUICK = OracleSettings(instances=2, draws=40_000, batch=20_000, trajectories=2000, seed=11)

def test_sidak_z():
    assert sidak_z(3.0, 1) == pytest.approx(3.0)
    assert sidak_z(3.0, 100) > sidak_z(3.0, 10) > 3.0

@pytest.mark.parametrize("k, x", [(0.5, 0.2), (3.0, 2.5), (10.0, 30.0), (45.0, 40.0), (1.0, 1.0)])
def test_reference_incomplete_gamma(k, x):
    assert regularized_gamma_reference(k, x) == pytest.approx(gammainc(k, x), abs=1e-12)

def test_incomplete_gamma_accuracy():
    rows = _finalize(incomplete_gamma_check(np.random.default_rng(0), points=2000), 3.0)
    assert rows[0].passed

def test_logistic_checks_pass():
    rows = _finalize(logistic_checks(np.random.default_rng(1), EhCircuit()), 3.0)
    assert len(rows) == 40
    assert all(r.passed for r in rows)

def test_markov_checks_pass():
    rows = _finalize(markov_checks(np.random.default_rng(2), 2000), 3.0)
    assert {r.check for r in rows} == {"triple_vs_trajectory", "n_step_vs_trajectory"}
    assert all(r.passed for r in rows)

def test_triple_rows_cover_every_entry_with_consumption():
    rows = _finalize(markov_checks(np.random.default_rng(5), 2000), 3.0)
    triple = [r for r in rows if r.check == "triple_vs_trajectory"]
    assert len(triple) == 9
    for entry in ("p_down", "p_stay", "p_up"):
        assert sum(entry in r.subject for r in triple) == 3
    loss = {r.subject.split(", ")[2]: r for r in triple if r.subject.startswith("loss")}
    # losses route down with a partial departure mass
    assert 0.05 < loss["p_down"].analytical < 0.1
    assert loss["p_stay"].analytical == pytest.approx(1.0 - loss["p_down"].analytical)
    assert loss["p_up"].analytical < 1e-9
    assert all(r.passed for r in triple)

def test_random_small_instance_bounds():
    settings = OracleSettings()
    rng = np.random.default_rng(3)
    for _ in range(20):
        inst = random_small_instance(rng, settings)
        assert 1 <= inst.ls.L <= 3 and 1 <= inst.ls.N <= 4 and 1 <= inst.ls.K <= 4
        assert inst.pilots.pilot_index.max() < inst.pilots.tau_p
        assert np.all(inst.pc.eta > 0)

def test_suite_passes_and_reports(tmp_path):
    rows = run_validation(QUICK)
    failed = [r for r in rows if not r.passed]
    assert not failed, failed
    frame = report_frame(rows)
    assert list(frame.columns) == ["check", "subject", "analytical", "oracle", "standard_error", "tolerance", "passed"]
    back = read_csv(write_report(rows, tmp_path))
    assert len(back) == len(rows)
    assert np.array_equal(back["tolerance"].to_numpy(), frame["tolerance"].to_numpy())

def test_corrupted_kernel_is_caught():
    settings = QUICK.model_copy(update={"instances": 3, "draws": 100_000})
    rows = run_validation(settings, corrupt="upsilon_coh")
    failing = {r.check for r in rows if not r.passed}
    assert "upsilon_coh" in failing

def test_unknown_corruption_target():
    with pytest.raises(ValueError):
        run_validation(QUICK, corrupt="everything")
