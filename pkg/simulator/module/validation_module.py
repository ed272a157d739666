import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy.stats import norm

from decorators import logger, timeit_log
from module.channel_module import PilotAssignment, assign_pilots
from module.closedform_module import (
    logistic_derivatives, mean_rf_power, quadform_mean_cross_ap, quadform_mean_same_ap,
    upsilon_coh, upsilon_noncoh, var_rf_power,
)
from module.markov_module import (
    EnergyChain, GammaFit, gamma_fit, harvest_cdf, n_step_distribution, point_mass, simulate_energy_trajectory,
    simulate_trajectories, state_center, state_change_frequencies, transition_triple,
)
from module.montecarlo_module import quadform_oracle, rf_power_oracle
from module.schema_json import EhCircuit, OracleSettings
from module.topology_module import LargeScaleModel, from_coefficients
from module.wpt_module import PowerControl, logistic
from utils import write_csv

CORRUPTIBLE = ("mean_rf_power", "var_rf_power", "quadform_same_ap", "quadform_cross_ap", "upsilon_coh", "upsilon_noncoh")
CORRUPTION_FACTOR = 1.25

@dataclass
class ValidationRow:
    check: str
    subject: str
    analytical: float
    oracle: float
    standard_error: float
    tolerance: float
    passed: bool

@dataclass
class _Pending:
    check: str
    subject: str
    analytical: complex
    oracle: complex
    standard_error: float
    rel_tol: float = 0.0
    fixed_tol: Optional[float] = None

def sidak_z(z: float, rows: int) -> float:
    """Per-row z keeping the family-wise false-alarm rate of a single z check."""
    alpha = 2.0 * norm.sf(z)
    per_row = 1.0 - (1.0 - alpha) ** (1.0 / max(rows, 1))
    return float(norm.isf(per_row / 2.0))

def _finalize(pending: list[_Pending], z: float) -> list[ValidationRow]:
    statistical = sum(1 for p in pending if p.fixed_tol is None)
    z_row = sidak_z(z, statistical)
    rows = []
    for p in pending:
        if p.fixed_tol is None:
            tol = max(p.rel_tol * abs(p.analytical), z_row * p.standard_error)
        else:
            tol = p.fixed_tol
        err = abs(p.analytical - p.oracle)
        rows.append(ValidationRow(
            check=p.check, subject=p.subject,
            analytical=float(np.real(p.analytical)) if np.isreal(p.analytical) else float(abs(p.analytical)),
            oracle=float(np.real(p.oracle)) if np.isreal(p.oracle) else float(abs(p.oracle)),
            standard_error=float(p.standard_error), tolerance=float(tol), passed=bool(err <= tol),
        ))
    return rows

# ------------- RANDOM INSTANCES ----------------------------
@dataclass(frozen=True)
class SmallInstance:
    ls: LargeScaleModel
    pilots: PilotAssignment
    pc: PowerControl

def random_small_instance(rng: np.random.Generator, settings: OracleSettings) -> SmallInstance:
    L = int(rng.integers(1, settings.max_L + 1))
    N = int(rng.integers(1, settings.max_N + 1))
    K = int(rng.integers(1, settings.max_K + 1))
    tau_p = int(rng.integers(1, K + 1))
    pilots = assign_pilots(K, tau_p, "round_robin")

    zeta = rng.uniform(0.2, 2.0, size=(K, L))
    k_factor = np.where(rng.random((K, L)) < 0.3, 0.0, rng.uniform(0.1, 5.0, size=(K, L)))
    beta = zeta / (k_factor + 1.0)
    phi = rng.uniform(-np.pi / 2, np.pi / 2, size=(K, L))
    sigma2 = float(rng.uniform(0.1, 1.0))
    ls = from_coefficients(beta, beta * k_factor, phi, pilots.pilot_index, N, 1.0, sigma2)
    pc = PowerControl(eta=rng.uniform(0.2, 1.0, size=(K, L)))
    return SmallInstance(ls=ls, pilots=pilots, pc=pc)

def _pick_pair(rng: np.random.Generator, inst: SmallInstance) -> tuple[int, int]:
    K = inst.ls.K
    k = int(rng.integers(0, K))
    sharing = [i for i in range(K) if i != k and inst.pilots.shares(i, k)]
    i = int(rng.choice(sharing)) if sharing and rng.random() < 0.7 else int(rng.integers(0, K))
    return k, i

# ------------- CHECK GROUPS --------------------------------
def _instance_checks(
    idx: int,
    inst: SmallInstance,
    settings: OracleSettings,
    rng: np.random.Generator,
    scale: Callable[[str], float],
) -> list[_Pending]:
    ls, pc = inst.ls, inst.pc
    out = []
    est = rf_power_oracle(ls, inst.pilots, pc, settings.draws, rng, settings.batch)
    mean_I = mean_rf_power(ls, pc) * scale("mean_rf_power")
    var_I = var_rf_power(ls, pc) * scale("var_rf_power")
    for k in range(ls.K):
        subject = f"instance {idx} (L={ls.L}, N={ls.N}, K={ls.K}) ue {k}"
        out.append(_Pending("mean_rf_power", subject, mean_I[k], est.mean[k], est.standard_error[k]))
        out.append(_Pending("var_rf_power", subject, var_I[k], est.variance[k], est.variance_standard_error[k],
                            rel_tol=settings.var_rel_tol))

    k, i = _pick_pair(rng, inst)
    l = int(rng.integers(0, ls.L))
    subject = f"instance {idx} k={k} i={i} l={l}"
    same = quadform_oracle(ls, inst.pilots, k, i, l, l, settings.draws, rng, settings.batch)
    out.append(_Pending("quadform_same_ap", subject, quadform_mean_same_ap(k, i, l, ls) * scale("quadform_same_ap"),
                        same.mean, same.standard_error))
    out.append(_Pending("upsilon_coh", subject, upsilon_coh(ls, k, i, l) * scale("upsilon_coh"),
                        same.variance, same.variance_standard_error, rel_tol=settings.var_rel_tol))
    if ls.L > 1:
        lp = int(rng.choice([x for x in range(ls.L) if x != l]))
        subject = f"instance {idx} k={k} i={i} l={l} l'={lp}"
        cross = quadform_oracle(ls, inst.pilots, k, i, l, lp, settings.draws, rng, settings.batch)
        out.append(_Pending("quadform_cross_ap", subject,
                            quadform_mean_cross_ap(k, i, l, lp, ls) * scale("quadform_cross_ap"),
                            cross.mean, cross.standard_error))
        out.append(_Pending("upsilon_noncoh", subject, upsilon_noncoh(ls, k, i, l, lp) * scale("upsilon_noncoh"),
                            cross.variance, cross.variance_standard_error, rel_tol=settings.var_rel_tol))
    return out

def logistic_checks(rng: np.random.Generator, circuit: EhCircuit, points: int = 20) -> list[_Pending]:
    """Central finite differences of the logistic map, away from the inflection point."""
    out = []
    offsets = np.where(rng.random(points) < 0.5, -1.0, 1.0) * rng.uniform(0.1, 0.9, size=points)
    offsets = np.where(offsets > 0, offsets * 2.0, offsets)
    h1, h2 = 1e-6 * circuit.b, 1e-3 * circuit.b
    for I in circuit.b * (1.0 + offsets):
        _, d1, d2 = logistic_derivatives(I, circuit)
        fd1 = (logistic(I + h1, circuit) - logistic(I - h1, circuit)) / (2 * h1)
        fd2 = (logistic(I + h2, circuit) - 2 * logistic(I, circuit) + logistic(I - h2, circuit)) / h2**2
        subject = f"I={I:.6g} W"
        out.append(_Pending("logistic_d1", subject, float(d1), float(fd1), 0.0, fixed_tol=1e-4 * abs(float(d1))))
        out.append(_Pending("logistic_d2", subject, float(d2), float(fd2), 0.0, fixed_tol=1e-3 * abs(float(d2))))
    return out

def regularized_gamma_reference(k: float, x: float) -> float:
    """Lower regularized incomplete gamma by series (x < k+1) or Lentz continued fraction."""
    if x <= 0:
        return 0.0
    log_prefix = k * math.log(x) - x - math.lgamma(k)
    if x < k + 1.0:
        term = total = 1.0 / k
        a = k
        for _ in range(10_000):
            a += 1.0
            term *= x / a
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return total * math.exp(log_prefix)
    tiny = 1e-300
    b = x + 1.0 - k
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for n in range(1, 10_000):
        an = -n * (n - k)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-17:
            break
    return 1.0 - math.exp(log_prefix) * h

def incomplete_gamma_check(rng: np.random.Generator, points: int = 10_000) -> list[_Pending]:
    ks = rng.uniform(0.1, 50.0, size=points)
    xs = rng.uniform(0.0, 100.0, size=points)
    ours = harvest_cdf(xs, GammaFit(shape=ks, scale=1.0))
    ref = np.array([regularized_gamma_reference(k, x) for k, x in zip(ks, xs)])
    worst = int(np.argmax(np.abs(ours - ref)))
    subject = f"{points} points, worst at k={ks[worst]:.4g}, x={xs[worst]:.4g}"
    return [_Pending("incomplete_gamma", subject, float(ours[worst]), float(ref[worst]), 0.0, fixed_tol=1e-10)]

def _triple_rows(
    rng: np.random.Generator, label: str, harvested: np.ndarray, E_C: float, E_f: float = 1.0, M: int = 1000, n: int = 2000,
) -> list[_Pending]:
    """One row per triple entry against the step frequencies of a single trajectory from mid-range."""
    fit = gamma_fit(float(harvested.mean()), float(harvested.var(ddof=1)))
    triple = transition_triple(fit, E_C, float(harvested.mean()) - E_C, M, E_f)
    start = M // 2
    states = simulate_energy_trajectory(harvested - E_C, state_center(start, E_f, M), E_f, M, n, rng)
    freq = state_change_frequencies(states, start_state=start)
    rows = []
    for entry in ("p_down", "p_stay", "p_up"):
        p = getattr(triple, entry)
        se = max(math.sqrt(p * (1 - p) / n), 1.0 / n)
        subject = f"{label}, E_C={E_C:.3g} J, {entry}, {n} intervals"
        rows.append(_Pending("triple_vs_trajectory", subject, p, getattr(freq, entry), se))
    return rows

def markov_checks(rng: np.random.Generator, trajectories: int) -> list[_Pending]:
    # the adjacent-state truncation is exact when every step has the same sign
    out = _triple_rows(rng, "gain only", rng.uniform(0.0, 2e-4, size=5000), 0.0)
    out += _triple_rows(rng, "gain above consumption", rng.gamma(400.0, 4.5e-7, size=5000), 1.0e-4)
    out += _triple_rows(rng, "loss below consumption", rng.gamma(400.0, 1.25e-7, size=5000), 1.3e-4)

    # 5-state chain driven by whole-state jumps, exact away from the boundary
    M, E_f = 5, 5.0
    jumps = np.array([-1.0] * 3 + [0.0] * 11 + [1.0] * 6) * (E_f / M)
    chain = EnergyChain(
        M=M, E_f=E_f, E_C=0.0,
        p_down=np.array([0.15]), p_stay=np.array([0.55]), p_up=np.array([0.30]),
        mean_dE=np.array([jumps.mean()]), neg_prob=np.array([0.15]),
    )
    start = 3
    paths = simulate_trajectories(jumps, np.full(trajectories, state_center(start, E_f, M)), E_f, M, 3, rng)
    for n_steps in (1, 2, 3):
        pi = n_step_distribution(chain, 0, point_mass(M, start), n_steps).pi
        for s in range(1, M + 1):
            p_hat = float(np.mean(paths[:, n_steps - 1] == s))
            se = max(math.sqrt(pi[s - 1] * (1 - pi[s - 1]) / trajectories), 1.0 / trajectories)
            out.append(_Pending("n_step_vs_trajectory", f"n={n_steps} state {s}", float(pi[s - 1]), p_hat, se))
    return out

# ------------- SUITE ---------------------------------------
@timeit_log
def run_validation(settings: OracleSettings, corrupt: Optional[str] = None) -> list[ValidationRow]:
    if corrupt is not None and corrupt not in CORRUPTIBLE:
        raise ValueError(f"unknown corruptible term {corrupt!r}, expected one of {CORRUPTIBLE}")

    def scale(term: str) -> float:
        return CORRUPTION_FACTOR if term == corrupt else 1.0

    root = np.random.SeedSequence(settings.seed)
    ss_instances, ss_logistic, ss_gamma, ss_markov = root.spawn(4)
    pending: list[_Pending] = []
    for idx, ss in enumerate(ss_instances.spawn(settings.instances)):
        rng = np.random.default_rng(ss)
        inst = random_small_instance(rng, settings)
        pending.extend(_instance_checks(idx, inst, settings, rng, scale))
        logger.info(f"instance {idx + 1}/{settings.instances} sampled (L={inst.ls.L}, N={inst.ls.N}, K={inst.ls.K})")
    pending.extend(logistic_checks(np.random.default_rng(ss_logistic), EhCircuit()))
    pending.extend(incomplete_gamma_check(np.random.default_rng(ss_gamma)))
    pending.extend(markov_checks(np.random.default_rng(ss_markov), settings.trajectories))
    return _finalize(pending, settings.z)

def report_frame(rows: list[ValidationRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows])

def write_report(rows: list[ValidationRow], out_dir: str | Path) -> Path:
    frame = report_frame(rows)
    path = write_csv(frame, Path(out_dir) / "validation.csv")
    failed = frame[~frame["passed"]]
    summary = frame.groupby("check")["passed"].agg(["count", "sum"])
    for check, row in summary.iterrows():
        logger.info(f"[{check}] {int(row['sum'])}/{int(row['count'])} passed")
    for _, row in failed.iterrows():
        logger.error(
            f"FAIL {row['check']} {row['subject']}: analytical={row['analytical']:.6e} "
            f"oracle={row['oracle']:.6e} se={row['standard_error']:.3e} tol={row['tolerance']:.3e}"
        )
    return path
