from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from decorators import logger, timeit_log
from module.closedform_module import HarvestStatistics, harvest_statistics
from module.config_module import config_hash, deployment_hash
from module.markov_module import (
    EnergyChain, build_energy_chain, gamma_fit, harvest_cdf, n_step_distribution,
    n_step_transition_summary,
)
from module.montecarlo_module import (
    RunResult, build_deployment, empirical_statistics, ks_distance, median_energy_user, run,
)
from module.schema_json import ExperimentSpec, RunManifest, SystemConfig
from module.topology_module import topology_to_file
from utils import load_json, point_dirname, read_csv, save_json, search_run_dirs, write_csv

MEAN_I_SE = 3.0
MEAN_E_REL = 0.10
VAR_E_REL = 0.25
KS_MAX = 0.05
NEG_PROB_ABS = 0.05

@dataclass(frozen=True)
class RunOutcome:
    directory: Path
    L: int
    N: int
    topology_id: int
    median_ue: int
    median_samples: np.ndarray  # E of the median-energy UE, one per interval
    dE_samples: np.ndarray      # dE of the same UE
    analytical_neg_prob: float
    p_down: float
    p_stay: float
    p_up: float

# ------------- TABLES --------------------------------------
def samples_frame(I: np.ndarray, E: np.ndarray, dE: np.ndarray) -> pd.DataFrame:
    """Long layout: one row per (interval, ue), interval-major."""
    intervals, K = I.shape
    return pd.DataFrame({
        "interval": np.repeat(np.arange(intervals), K),
        "ue": np.tile(np.arange(K), intervals),
        "I_E": I.ravel(),
        "E_E": E.ravel(),
        "dE": dE.ravel(),
    })

def _wide(frame: pd.DataFrame, column: str) -> np.ndarray:
    return frame.pivot(index="interval", columns="ue", values=column).sort_index().to_numpy()

def cdf_frame(energy: np.ndarray, mean_E: float, var_E: float) -> pd.DataFrame:
    support = np.sort(energy)
    n = support.size
    return pd.DataFrame({
        "energy_J": support,
        "empirical_cdf": np.arange(1, n + 1) / n,
        "analytical_cdf": harvest_cdf(support, gamma_fit(mean_E, var_E)),
    })

def transitions_frame(chain: EnergyChain, L: int) -> pd.DataFrame:
    return pd.DataFrame({
        "L": L,
        "UE": np.arange(chain.p_up.size),
        "p_down": chain.p_down,
        "p_stay": chain.p_stay,
        "p_up": chain.p_up,
    })

def evolution_frame(chain: EnergyChain, k: int, n_steps: list[int]) -> pd.DataFrame:
    parts = []
    for n in n_steps:
        pi = n_step_distribution(chain, k, None, n).pi
        parts.append(pd.DataFrame({"n": n, "state": np.arange(1, chain.M + 1), "probability": pi}))
    return pd.concat(parts, ignore_index=True)

def n_step_frame(chain: EnergyChain, k: int, n_steps: list[int]) -> pd.DataFrame:
    start = chain.M // 2
    rows = []
    for n in n_steps:
        t = n_step_transition_summary(chain, k, start, n)
        rows.append({"n": n, "ue": k, "start_state": start, "p_down": t.p_down, "p_stay": t.p_stay, "p_up": t.p_up})
    return pd.DataFrame(rows)

def checks_frame(analytical: HarvestStatistics, E: np.ndarray, I: np.ndarray, dE: np.ndarray, k: int, chain: EnergyChain) -> pd.DataFrame:
    """Full-pipeline gaps on the median-energy UE; informational, never exit-status bearing."""
    n = I.shape[0]
    emp = E[:, k]
    se_I = float(I[:, k].std(ddof=1) / np.sqrt(n))
    gap_I = abs(float(I[:, k].mean()) - float(analytical.mean_I[k])) / se_I if se_I > 0 else 0.0
    fit = gamma_fit(float(analytical.mean_E[k]), float(analytical.var_E[k]))

    def rel(a: float, b: float) -> float:
        return abs(a - b) / abs(a) if a != 0 else float("inf")

    rows = [
        ("mean_I_in_se", float(analytical.mean_I[k]), float(I[:, k].mean()), gap_I, MEAN_I_SE),
        ("mean_E_rel", float(analytical.mean_E[k]), float(emp.mean()),
         rel(float(analytical.mean_E[k]), float(emp.mean())), MEAN_E_REL),
        ("var_E_rel", float(analytical.var_E[k]), float(emp.var(ddof=1)),
         rel(float(analytical.var_E[k]), float(emp.var(ddof=1))), VAR_E_REL),
        ("ks_distance", 0.0, 0.0, ks_distance(emp, lambda x: harvest_cdf(x, fit)), KS_MAX),
        ("neg_prob_abs", float(chain.neg_prob[k]), float(np.mean(dE[:, k] <= 0)),
         abs(float(chain.neg_prob[k]) - float(np.mean(dE[:, k] <= 0))), NEG_PROB_ABS),
    ]
    frame = pd.DataFrame(rows, columns=["check", "analytical", "empirical", "gap", "tolerance"])
    frame.insert(1, "ue", k)
    frame["passed"] = frame["gap"] <= frame["tolerance"]
    return frame

# ------------- ONE RUN DIRECTORY ---------------------------
def simulate_topology(
    config: SystemConfig,
    spec: ExperimentSpec,
    topology_id: int,
    out_dir: Path,
    topology_file: Optional[str | Path] = None,
    workers: int = 1,
) -> RunOutcome:
    digest = config_hash(config)
    dep = build_deployment(config, topology_id, topology_file)
    result = run(config, spec.intervals, workers=workers, topology_id=topology_id, deployment=dep)
    stats = harvest_statistics(dep.ls, dep.pc, config, circuits=dep.circuits)
    logger.info(f"harvested-energy variance via the {config.variance_expansion!r} expansion")
    chain = build_energy_chain(stats, config)
    k = median_energy_user(result)

    files = [
        write_csv(samples_frame(result.I, result.E, result.dE), out_dir / "samples.csv"),
        write_csv(cdf_frame(result.E[:, k], float(stats.mean_E[k]), float(stats.var_E[k])), out_dir / "cdf.csv"),
        write_csv(transitions_frame(chain, config.L), out_dir / "transitions.csv"),
        write_csv(evolution_frame(chain, k, spec.n_steps), out_dir / "markov_evolution.csv"),
        write_csv(n_step_frame(chain, k, spec.n_steps), out_dir / "n_step_transitions.csv"),
        write_csv(checks_frame(stats, result.E, result.I, result.dE, k, chain), out_dir / "checks.csv"),
        save_json(topology_to_file(dep.topology, dep.ls, deployment_hash(config)).model_dump(), out_dir / "topology.json"),
    ]
    manifest = RunManifest(
        seed=config.seed, config_hash=digest, intervals=spec.intervals, topology_id=topology_id,
        workers=workers, wall_time_s=result.metadata["wall_time_s"], L=config.L, N=config.N,
        median_ue=k, variance_expansion=config.variance_expansion,
        files=[p.name for p in files] + ["manifest.json"], system=config.model_dump(mode="json"),
    )
    save_json(manifest.model_dump(), out_dir / "manifest.json")
    t = chain.triple(k)
    return RunOutcome(
        directory=out_dir, L=config.L, N=config.N, topology_id=topology_id, median_ue=k,
        median_samples=result.E[:, k], dE_samples=result.dE[:, k],
        analytical_neg_prob=float(chain.neg_prob[k]), p_down=t.p_down, p_stay=t.p_stay, p_up=t.p_up,
    )

def _summary_row(label, outcomes: list[RunOutcome]) -> dict:
    energy = np.concatenate([o.median_samples for o in outcomes])
    dE = np.concatenate([o.dE_samples for o in outcomes])
    return {
        "topology": label,
        "median_ue": outcomes[0].median_ue if len(outcomes) == 1 else -1,
        "median_energy_J": float(np.median(energy)),
        "mean_energy_J": float(energy.mean()),
        "p_down": float(np.mean([o.p_down for o in outcomes])),
        "p_stay": float(np.mean([o.p_stay for o in outcomes])),
        "p_up": float(np.mean([o.p_up for o in outcomes])),
        "neg_prob_analytical": float(np.mean([o.analytical_neg_prob for o in outcomes])),
        "neg_prob_empirical": float(np.mean(dE <= 0)),
    }

def simulate_point(
    config: SystemConfig,
    spec: ExperimentSpec,
    out_root: Path,
    topology_file: Optional[str | Path] = None,
    workers: int = 1,
) -> dict:
    """All topologies of one sweep point; returns the pooled summary row."""
    point_dir = Path(out_root) / point_dirname(config.L, config.N)
    logger.info(f"sweep point L={config.L}, N={config.N} -> {point_dir}")
    outcomes = []
    for t in range(spec.topologies):
        run_dir = point_dir if spec.topologies == 1 else point_dir / f"topology_{t:02d}"
        outcomes.append(simulate_topology(config, spec, t, run_dir, topology_file, workers))
    rows = [_summary_row(o.topology_id, [o]) for o in outcomes]
    pooled = _summary_row("pooled", outcomes)
    write_csv(pd.DataFrame(rows + [pooled]), point_dir / "summary.csv")
    return {"L": config.L, "N": config.N, **pooled}

# ------------- COMMANDS ------------------------------------
@timeit_log
def cmd_simulate(spec: ExperimentSpec, topology_file: Optional[str | Path] = None) -> list[dict]:
    if spec.intervals < 2:
        raise ValueError(f"simulate needs at least 2 intervals, got {spec.intervals}")
    if topology_file is not None and spec.topologies > 1:
        raise ValueError("--topology-file fixes the deployment; it cannot be combined with topologies > 1")
    configs = spec.points()
    out_root = Path(spec.out_dir)

    # sweep points in parallel when there are several; otherwise the workers go to the intervals
    if spec.workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=min(spec.workers, len(configs))) as pool:
            futures = [pool.submit(simulate_point, c, spec, out_root, topology_file, 1) for c in configs]
            summaries = [f.result() for f in futures]
    else:
        summaries = [simulate_point(c, spec, out_root, topology_file, spec.workers) for c in configs]
    logger.info(f"simulate finished: {len(summaries)} sweep point(s) under {out_root}")
    return summaries

GAIN_TARGET_L = 25
GAIN_MIN = 0.5
UP_DOMINANT_FROM_L = 9

def _increasing(values: pd.Series) -> bool:
    return bool(np.all(np.diff(values.to_numpy()) > 0))

def _nonincreasing(values: pd.Series) -> bool:
    return bool(np.all(np.diff(values.to_numpy()) <= 0))

def trend_frame(summary: pd.DataFrame) -> pd.DataFrame:
    """Directional checks over the sweep, ordered by L."""
    ordered = summary.sort_values("L").reset_index(drop=True)
    energy = ordered["median_energy_J"]
    rising = ordered.loc[ordered["L"] <= GAIN_TARGET_L, "median_energy_J"]
    target = ordered[ordered["L"] == GAIN_TARGET_L]
    at = target.iloc[0] if len(target) else ordered.iloc[-1]
    first = float(energy.iloc[0])
    gain = float(at["median_energy_J"]) / first - 1.0 if first > 0 else float("nan")
    later = ordered[ordered["L"] >= UP_DOMINANT_FROM_L]
    rows = [
        (f"median_energy_increasing_to_L{GAIN_TARGET_L}", _increasing(rising)),
        (f"gain_at_L{int(at['L'])}_above_{GAIN_MIN:.0%}", bool(gain > GAIN_MIN)),
        ("p_up_increasing_in_L", _increasing(ordered["p_up"])),
        ("p_down_nonincreasing_in_L", _nonincreasing(ordered["p_down"])),
        ("first_point_p_down_above_p_up", bool(ordered["p_down"].iloc[0] > ordered["p_up"].iloc[0])),
        (f"p_up_above_p_down_from_L{UP_DOMINANT_FROM_L}", bool(len(later) > 0 and np.all(later["p_up"] > later["p_down"]))),
    ]
    return pd.DataFrame(rows, columns=["trend", "holds"])

@timeit_log
def cmd_sweep(spec: ExperimentSpec, topology_file: Optional[str | Path] = None) -> pd.DataFrame:
    summary = pd.DataFrame(cmd_simulate(spec, topology_file)).drop(columns=["topology", "median_ue"])
    first = summary["median_energy_J"].iloc[0]
    summary.insert(3, "gain_vs_first", summary["median_energy_J"] / first if first > 0 else np.nan)
    out_root = Path(spec.out_dir)
    write_csv(summary, out_root / "sweep_summary.csv")
    trends = trend_frame(summary)
    write_csv(trends, out_root / "trend_checks.csv")
    for _, row in trends.iterrows():
        logger.info(f"trend {row['trend']}: {'holds' if row['holds'] else 'does not hold'}")
    return summary

@timeit_log
def cmd_analyze(run_dir: str | Path, spec: Optional[ExperimentSpec] = None) -> list[Path]:
    """Rebuild the Gamma and Markov layers from stored samples.csv, using empirical moments."""
    n_steps = (spec or ExperimentSpec()).n_steps
    dirs = search_run_dirs(run_dir)
    if not dirs:
        raise FileNotFoundError(f"no manifest.json under {run_dir}")
    written = []
    for d in dirs:
        manifest = RunManifest.model_validate(load_json(d / "manifest.json"))
        config = SystemConfig.model_validate(manifest.system)
        samples = read_csv(d / "samples.csv")
        I, E, dE = (_wide(samples, c) for c in ("I_E", "E_E", "dE"))

        result = RunResult(I=I, E=E, dE=dE, metadata=manifest.model_dump())
        stats = empirical_statistics(result)
        chain = build_energy_chain(stats, config)
        k = manifest.median_ue if manifest.median_ue is not None else median_energy_user(result)

        fits = [gamma_fit(float(m), float(v)) for m, v in zip(stats.mean_E, stats.var_E)]
        gamma = pd.DataFrame({
            "ue": np.arange(config.K),
            "shape": [f.shape for f in fits],
            "scale": [f.scale for f in fits],
            "mean_E": stats.mean_E,
            "var_E": stats.var_E,
            "neg_prob_fit": chain.neg_prob,
            "neg_prob_empirical": np.mean(dE <= 0, axis=0),
        })
        out = d / "analysis"
        written += [
            write_csv(gamma, out / "gamma_fit.csv"),
            write_csv(transitions_frame(chain, config.L), out / "transitions.csv"),
            write_csv(evolution_frame(chain, k, n_steps), out / "markov_evolution.csv"),
            write_csv(n_step_frame(chain, k, n_steps), out / "n_step_transitions.csv"),
        ]
        logger.info(f"analyzed {d} ({result.intervals} intervals, median UE {k})")
    return written
