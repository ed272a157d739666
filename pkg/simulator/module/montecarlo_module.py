import sys, time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from tqdm import tqdm

from decorators import logger, timeit_log
from module.channel_module import PilotAssignment, assign_pilots, draw_channels, estimate_channels
from module.closedform_module import HarvestStatistics
from module.config_module import config_hash
from module.markov_module import consumption_energy
from module.schema_json import SystemConfig, TopologyFile
from module.topology_module import (
    LargeScaleModel, Topology, from_fading, generate_topology, large_scale, topology_from_file,
)
from module.wpt_module import (
    CircuitBank, PowerControl, circuit_bank, equal_power_control, harvest, received_rf_energy,
)
from utils import load_json

MIN_ORACLE_DRAWS = 10_000

# ------------- RNG STREAMS ---------------------------------
@dataclass(frozen=True)
class DeploymentStreams:
    placement: np.random.Generator
    shadowing: np.random.Generator
    pilots: np.random.Generator

@dataclass(frozen=True)
class IntervalStreams:
    fading: np.random.Generator
    noise: np.random.Generator

def deployment_streams(master_seed: int, topology_id: int = 0) -> DeploymentStreams:
    root = np.random.SeedSequence([master_seed, 0, topology_id])
    ss_placement, ss_shadowing, ss_pilots = root.spawn(3)
    return DeploymentStreams(
        placement=np.random.default_rng(ss_placement),
        shadowing=np.random.default_rng(ss_shadowing),
        pilots=np.random.default_rng(ss_pilots),
    )

def interval_streams(master_seed: int, topology_id: int, interval: int) -> IntervalStreams:
    """Pure function of (seed, topology, interval): no sequential dependence between intervals."""
    root = np.random.SeedSequence([master_seed, 1, topology_id, interval])
    ss_fading, ss_noise = root.spawn(2)
    return IntervalStreams(fading=np.random.default_rng(ss_fading), noise=np.random.default_rng(ss_noise))

# ------------- STREAMING MOMENTS ---------------------------
class RunningMoments:
    """
    Count, mean and central moment sums M2..M4 along axis 0, with an
    associative pairwise merge so batches may be combined in any grouping.
    """

    def __init__(self, shape: tuple = ()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)
        self.m3 = np.zeros(shape)
        self.m4 = np.zeros(shape)

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "RunningMoments":
        x = np.asarray(x, dtype=float)
        out = cls(x.shape[1:])
        if x.shape[0] == 0:
            return out
        out.count = x.shape[0]
        out.mean = x.mean(axis=0)
        d = x - out.mean
        out.m2 = np.sum(d**2, axis=0)
        out.m3 = np.sum(d**3, axis=0)
        out.m4 = np.sum(d**4, axis=0)
        return out

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        na, nb = self.count, other.count
        if nb == 0:
            return self
        if na == 0:
            self.count, self.mean, self.m2, self.m3, self.m4 = nb, other.mean, other.m2, other.m3, other.m4
            return self
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * nb / n
        m2 = self.m2 + other.m2 + delta**2 * na * nb / n
        m3 = (
            self.m3 + other.m3
            + delta**3 * na * nb * (na - nb) / n**2
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n
        )
        m4 = (
            self.m4 + other.m4
            + delta**4 * na * nb * (na**2 - na * nb + nb**2) / n**3
            + 6.0 * delta**2 * (na**2 * other.m2 + nb**2 * self.m2) / n**2
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n
        )
        self.count, self.mean, self.m2, self.m3, self.m4 = n, mean, m2, m3, m4
        return self

    def update(self, x: np.ndarray) -> "RunningMoments":
        return self.merge(RunningMoments.from_samples(x))

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / (self.count - 1) if self.count > 1 else np.zeros_like(self.m2)

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.variance / self.count) if self.count > 0 else np.zeros_like(self.m2)

    @property
    def variance_standard_error(self) -> np.ndarray:
        """Delta method on the fourth central moment: sqrt((m4 - s^4) / n)."""
        if self.count < 2:
            return np.zeros_like(self.m2)
        s2 = self.m2 / self.count
        m4 = self.m4 / self.count
        return np.sqrt(np.maximum(m4 - s2**2, 0.0) / self.count)

@dataclass(frozen=True)
class McEstimate:
    mean: np.ndarray | float | complex
    variance: np.ndarray | float
    standard_error: np.ndarray | float
    count: int
    variance_standard_error: np.ndarray | float = 0.0

def _estimate(real: RunningMoments, imag: Optional[RunningMoments] = None) -> McEstimate:
    if imag is None:
        return McEstimate(
            mean=real.mean, variance=real.variance, standard_error=real.standard_error,
            count=real.count, variance_standard_error=real.variance_standard_error,
        )
    # complex samples: variance is E|Z - EZ|^2, the two parts treated as independent
    variance = real.variance + imag.variance
    return McEstimate(
        mean=real.mean + 1j * imag.mean,
        variance=variance,
        standard_error=np.sqrt(variance / real.count),
        count=real.count,
        variance_standard_error=np.sqrt(real.variance_standard_error**2 + imag.variance_standard_error**2),
    )

# ------------- DEPLOYMENT ----------------------------------
@dataclass(frozen=True)
class Deployment:
    config: SystemConfig
    topology: Topology
    pilots: PilotAssignment
    ls: LargeScaleModel
    pc: PowerControl
    circuits: CircuitBank
    topology_id: int = 0

@timeit_log
def build_deployment(
    config: SystemConfig,
    topology_id: int = 0,
    topology_file: Optional[str | Path] = None,
) -> Deployment:
    """Placement and pilots first, then the large-scale model that depends on both."""
    if topology_file is not None:
        tf = TopologyFile.model_validate(load_json(topology_file))
        if tf.N != config.N:
            raise ValueError(f"topology file has N={tf.N}, config expects N={config.N}")
        topology, fading = topology_from_file(tf, config)
        pilots = PilotAssignment(pilot_index=fading["pilot_index"], tau_p=config.tau_p)
        ls = from_fading(fading["zeta"], fading["K_factor"], fading["phi"], pilots, config, fading["shadowing_db"])
        logger.info(f"deployment reloaded from {topology_file}")
    else:
        streams = deployment_streams(config.seed, topology_id)
        topology = generate_topology(config, streams.placement)
        pilots = assign_pilots(config.K, config.tau_p, config.pilot_policy, streams.pilots)
        ls = large_scale(topology, config, streams.shadowing, pilots)
    return Deployment(
        config=config, topology=topology, pilots=pilots, ls=ls,
        pc=equal_power_control(config), circuits=circuit_bank(config), topology_id=topology_id,
    )

# ------------- ENGINE --------------------------------------
@dataclass(frozen=True)
class RunResult:
    I: np.ndarray   # (intervals, K) W
    E: np.ndarray   # (intervals, K) J
    dE: np.ndarray  # (intervals, K) J
    metadata: dict = field(default_factory=dict)

    @property
    def intervals(self) -> int:
        return self.I.shape[0]

def simulate_interval(dep: Deployment, interval: int) -> tuple[np.ndarray, np.ndarray]:
    streams = interval_streams(dep.config.seed, dep.topology_id, interval)
    true = draw_channels(dep.ls, streams.fading)
    state = estimate_channels(true, dep.ls, dep.pilots, streams.noise)
    I = received_rf_energy(state, dep.ls, dep.pc)
    return I, harvest(I, dep.circuits, dep.config.tau_h_seconds)

def _simulate_chunk(dep: Deployment, indices: list[int], progress: bool = False) -> tuple[np.ndarray, np.ndarray]:
    I = np.empty((len(indices), dep.config.K))
    E = np.empty_like(I)
    for row, t in enumerate(tqdm(indices, desc="intervals", disable=not progress, leave=False)):
        try:
            I[row], E[row] = simulate_interval(dep, t)
        except Exception as e:
            raise RuntimeError(f"interval {t}: {e}") from e
    return I, E

@timeit_log
def run(
    config: SystemConfig,
    intervals: int,
    *,
    workers: int = 1,
    topology_id: int = 0,
    deployment: Optional[Deployment] = None,
) -> RunResult:
    start = time.time()
    dep = build_deployment(config, topology_id) if deployment is None else deployment
    K = config.K
    indices = list(range(intervals))

    if workers <= 1 or intervals < 2:
        I, E = _simulate_chunk(dep, indices, progress=sys.stderr.isatty())
    else:
        chunks = [c.tolist() for c in np.array_split(np.array(indices), workers) if c.size]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, [dep] * len(chunks), chunks))
        I = np.concatenate([p[0] for p in parts]) if parts else np.empty((0, K))
        E = np.concatenate([p[1] for p in parts]) if parts else np.empty((0, K))

    I = I.reshape(intervals, K)
    E = E.reshape(intervals, K)
    wall = time.time() - start
    logger.info(f"run finished: {intervals} intervals, K={K}, workers={workers}, {wall:.2f} s")
    return RunResult(
        I=I,
        E=E,
        dE=E - consumption_energy(config),
        metadata={
            "config_hash": config_hash(config),
            "seed": config.seed,
            "intervals": intervals,
            "topology_id": dep.topology_id,
            "workers": workers,
            "wall_time_s": wall,
        },
    )

def empirical_statistics(result: RunResult) -> HarvestStatistics:
    if result.intervals < 2:
        raise ValueError("empirical statistics need at least two intervals")
    return HarvestStatistics(
        mean_I=result.I.mean(axis=0),
        var_I=result.I.var(axis=0, ddof=1),
        mean_E=result.E.mean(axis=0),
        var_E=result.E.var(axis=0, ddof=1),
        provenance="empirical",
    )

# ------------- EMPIRICAL DISTRIBUTIONS ---------------------
@dataclass(frozen=True)
class EmpiricalCdf:
    support: np.ndarray     # sorted samples
    cumulative: np.ndarray  # i/n at support[i-1]

    def __call__(self, x):
        p = np.searchsorted(self.support, np.asarray(x, dtype=float), side="right") / self.support.size
        return float(p) if np.ndim(p) == 0 else p

def empirical_cdf(samples) -> EmpiricalCdf:
    samples = np.sort(np.asarray(samples, dtype=float).ravel())
    if samples.size == 0:
        raise ValueError("empirical_cdf needs at least one sample")
    n = samples.size
    return EmpiricalCdf(support=samples, cumulative=np.arange(1, n + 1) / n)

def ks_distance(samples, cdf) -> float:
    """sup |F_n - F| for a continuous model CDF callable."""
    ecdf = empirical_cdf(samples)
    model = np.asarray(cdf(ecdf.support), dtype=float)
    n = ecdf.support.size
    above = ecdf.cumulative - model
    below = model - np.arange(n) / n
    return float(max(above.max(), below.max()))

def median_energy_user(result: RunResult) -> int:
    if result.intervals == 0:
        raise ValueError("median_energy_user needs a non-empty result")
    means = result.E.mean(axis=0)
    order = np.argsort(means, kind="stable")
    return int(order[(means.size - 1) // 2])

# ------------- SAMPLING ORACLES ----------------------------
def _batches(draws: int, batch: int):
    done = 0
    while done < draws:
        size = min(batch, draws - done)
        yield size
        done += size

def quadform_oracle(
    ls: LargeScaleModel,
    pilots: PilotAssignment,
    k: int,
    i: int,
    l: int,
    lp: int,
    draws: int,
    rng: np.random.Generator,
    batch: int = 20_000,
) -> McEstimate:
    """Samples T_il conj(T_il') with T_il = ghat_il^H g_kl; l == l' gives |T_il|^2."""
    if draws < MIN_ORACLE_DRAWS:
        raise ValueError(f"oracle needs at least {MIN_ORACLE_DRAWS} draws, got {draws}")
    real, imag = RunningMoments(), RunningMoments()
    for size in _batches(draws, batch):
        state = estimate_channels(draw_channels(ls, rng, batch=size), ls, pilots, rng)
        t_l = np.einsum("bn,bn->b", state.g_hat[:, i, l].conj(), state.g[:, k, l])
        t_lp = np.einsum("bn,bn->b", state.g_hat[:, i, lp].conj(), state.g[:, k, lp])
        z = t_l * t_lp.conj()
        real.update(z.real)
        imag.update(z.imag)
    if l == lp:
        return _estimate(real)
    return _estimate(real, imag)

def rf_power_oracle(
    ls: LargeScaleModel,
    pilots: PilotAssignment,
    pc: PowerControl,
    draws: int,
    rng: np.random.Generator,
    batch: int = 20_000,
) -> McEstimate:
    """Per-UE mean and variance of the RF power over fresh channel draws."""
    if draws < MIN_ORACLE_DRAWS:
        raise ValueError(f"oracle needs at least {MIN_ORACLE_DRAWS} draws, got {draws}")
    moments = RunningMoments((ls.K,))
    for size in _batches(draws, batch):
        state = estimate_channels(draw_channels(ls, rng, batch=size), ls, pilots, rng)
        moments.update(received_rf_energy(state, ls, pc))
    return _estimate(moments)
