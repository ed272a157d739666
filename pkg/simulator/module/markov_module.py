from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.special import gammainc

from decorators import logger, timeit_log
from module.closedform_module import HarvestStatistics
from module.schema_json import SystemConfig

class DegenerateFitError(ValueError):
    pass

@dataclass(frozen=True)
class GammaFit:
    shape: float  # k
    scale: float  # theta (J)
    atom: Optional[float] = None  # all mass at this energy when the variance vanished

    @property
    def mean(self) -> float:
        return self.atom if self.atom is not None else self.shape * self.scale

    @property
    def variance(self) -> float:
        return 0.0 if self.atom is not None else self.shape * self.scale**2

@dataclass(frozen=True)
class TransitionTriple:
    p_down: float
    p_stay: float
    p_up: float

@dataclass(frozen=True)
class EnergyChain:
    M: int
    E_f: float
    E_C: float
    p_down: np.ndarray   # (K,)
    p_stay: np.ndarray   # (K,)
    p_up: np.ndarray     # (K,)
    mean_dE: np.ndarray  # (K,)
    neg_prob: np.ndarray # (K,) Pr(dE <= 0)

    def triple(self, k: int) -> TransitionTriple:
        return TransitionTriple(float(self.p_down[k]), float(self.p_stay[k]), float(self.p_up[k]))

@dataclass(frozen=True)
class StateDistribution:
    pi: np.ndarray  # (M,), state s is pi[s - 1]
    n: int

def gamma_fit(mean_E: float, var_E: float) -> GammaFit:
    """Moment-matched Gamma; a zero variance with a non-negative mean gives a point mass at mean_E."""
    if var_E == 0 and mean_E >= 0:
        logger.warning(f"zero harvested-energy variance at mean {mean_E:.4g} J; using a point mass")
        return GammaFit(shape=np.inf, scale=0.0, atom=float(mean_E))
    if not (mean_E > 0 and var_E > 0):
        raise DegenerateFitError(f"Gamma fit needs positive moments, got mean={mean_E}, var={var_E}")
    return GammaFit(shape=mean_E**2 / var_E, scale=var_E / mean_E)

def harvest_cdf(E, fit: GammaFit):
    """Regularized lower incomplete gamma P(k, E/theta); 0 for E <= 0. A point mass gives 1{E >= atom}."""
    E = np.asarray(E, dtype=float)
    if fit.atom is not None:
        p = (E >= fit.atom).astype(float)
        return float(p) if np.ndim(p) == 0 else p
    x = np.maximum(E, 0.0) / fit.scale
    p = gammainc(fit.shape, x)
    return float(p) if np.ndim(p) == 0 else p

def consumption_energy(config: SystemConfig) -> float:
    return config.symbol_duration * (config.tau_p * config.P_p + config.tau_u * config.P_u)

def negative_transition_prob(fit: GammaFit, E_C: float) -> float:
    return harvest_cdf(E_C, fit)

def transition_triple(fit: GammaFit, E_C: float, mean_dE: float, M: int, E_f: float) -> TransitionTriple:
    if M < 2 or E_f <= 0:
        raise ValueError(f"need M >= 2 and E_f > 0, got M={M}, E_f={E_f}")
    ratio = M * abs(mean_dE) / E_f
    if ratio > 0.1:
        logger.warning(
            "M*|E{dE}|/E_f = %.3g exceeds 0.1: the adjacent-state truncation is coarse%s",
            ratio, " (departure mass clamped to 1)" if ratio > 1 else "",
        )
    q = min(1.0, ratio)
    F = negative_transition_prob(fit, E_C)
    p_down, p_up, p_stay = q * F, q * (1.0 - F), 1.0 - q
    total = p_down + p_stay + p_up
    return TransitionTriple(p_down / total, p_stay / total, p_up / total)

@timeit_log
def build_energy_chain(stats: HarvestStatistics, config: SystemConfig) -> EnergyChain:
    E_C = consumption_energy(config)
    K = stats.mean_E.shape[0]
    down, stay, up, neg = np.zeros(K), np.zeros(K), np.zeros(K), np.zeros(K)
    mean_dE = stats.mean_E - E_C
    for k in range(K):
        fit = gamma_fit(float(stats.mean_E[k]), float(stats.var_E[k]))
        t = transition_triple(fit, E_C, float(mean_dE[k]), config.M_states, config.E_f)
        down[k], stay[k], up[k] = t.p_down, t.p_stay, t.p_up
        neg[k] = negative_transition_prob(fit, E_C)
    logger.info(f"energy chain built for {K} UEs ({stats.provenance} moments), E_C={E_C:.4g} J")
    return EnergyChain(
        M=config.M_states, E_f=config.E_f, E_C=E_C,
        p_down=down, p_stay=stay, p_up=up, mean_dE=mean_dE, neg_prob=neg,
    )

def transition_matrix(chain: EnergyChain, k: int) -> sparse.csr_matrix:
    """Tridiagonal M x M matrix with reflecting ends (row = from-state)."""
    M = chain.M
    t = chain.triple(k)
    diag = np.full(M, t.p_stay)
    diag[0] += t.p_down
    diag[-1] += t.p_up
    return sparse.diags(
        [np.full(M - 1, t.p_down), diag, np.full(M - 1, t.p_up)],
        offsets=[-1, 0, 1],
        format="csr",
    )

def uniform_distribution(M: int) -> StateDistribution:
    return StateDistribution(pi=np.full(M, 1.0 / M), n=0)

def point_mass(M: int, state: int) -> StateDistribution:
    if not 1 <= state <= M:
        raise ValueError(f"state {state} outside 1..{M}")
    pi = np.zeros(M)
    pi[state - 1] = 1.0
    return StateDistribution(pi=pi, n=0)

def n_step_distribution(chain: EnergyChain, k: int, pi0: Optional[StateDistribution], n: int) -> StateDistribution:
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    pi0 = uniform_distribution(chain.M) if pi0 is None else pi0
    step = transition_matrix(chain, k).T.tocsr()
    pi = pi0.pi.copy()
    for _ in range(n):
        pi = step @ pi
    return StateDistribution(pi=pi, n=pi0.n + n)

def n_step_transition_summary(chain: EnergyChain, k: int, start_state: int, n: int) -> TransitionTriple:
    """Probabilities of ending below, at or above start_state after n intervals."""
    pi = n_step_distribution(chain, k, point_mass(chain.M, start_state), n).pi
    s = start_state - 1
    return TransitionTriple(p_down=float(pi[:s].sum()), p_stay=float(pi[s]), p_up=float(pi[s + 1:].sum()))

def energy_state(E, E_f: float, M: int) -> np.ndarray:
    """1-based state ceil(E*M/E_f), with E = 0 in state 1."""
    states = np.ceil(np.asarray(E, dtype=float) * M / E_f).astype(int)
    return np.clip(states, 1, M)

def simulate_energy_trajectory(
    dE_samples: np.ndarray,
    E0: float,
    E_f: float,
    M: int,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """States after each of n intervals, with dE resampled from dE_samples."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    dE_samples = np.asarray(dE_samples, dtype=float)
    if dE_samples.size == 0:
        raise ValueError("simulate_energy_trajectory needs at least one dE sample")
    steps = dE_samples[rng.integers(0, dE_samples.size, size=n)]
    energy = np.empty(n)
    level = min(max(E0, 0.0), E_f)
    for t in range(n):
        level = min(max(level + steps[t], 0.0), E_f)
        energy[t] = level
    return energy_state(energy, E_f, M)

def simulate_trajectories(
    dE_samples: np.ndarray, E0: np.ndarray, E_f: float, M: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized batch of trajectories, one row per entry of E0; shape (len(E0), n)."""
    E0 = np.asarray(E0, dtype=float)
    dE_samples = np.asarray(dE_samples, dtype=float)
    steps = dE_samples[rng.integers(0, dE_samples.size, size=(E0.size, n))]
    level = np.clip(E0, 0.0, E_f)
    energy = np.empty((E0.size, n))
    for t in range(n):
        level = np.clip(level + steps[:, t], 0.0, E_f)
        energy[:, t] = level
    return energy_state(energy, E_f, M)

def state_change_frequencies(states: np.ndarray, start_state: int) -> TransitionTriple:
    """Fraction of steps that moved down, stayed, or moved up along a trajectory."""
    path = np.concatenate([[start_state], np.asarray(states)])
    moves = np.diff(path)
    n = moves.size
    return TransitionTriple(
        p_down=float(np.sum(moves < 0)) / n,
        p_stay=float(np.sum(moves == 0)) / n,
        p_up=float(np.sum(moves > 0)) / n,
    )

def state_center(state: int, E_f: float, M: int) -> float:
    return (state - 0.5) * E_f / M
