import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from decorators import logger, timeit_log
from module.config_module import deployment_hash
from module.schema_json import SystemConfig, TopologyFile

if TYPE_CHECKING:
    from module.channel_module import PilotAssignment

def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True, order="C")
    arr.setflags(write=False)
    return arr

# ------------- PLACEMENT -----------------------------------
@dataclass(frozen=True)
class Topology:
    ap_positions: np.ndarray  # (L, 2) m
    ue_positions: np.ndarray  # (K, 2) m
    distances: np.ndarray     # (K, L) 3-D m
    placement: str            # "grid" | "random"

    @property
    def L(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def K(self) -> int:
        return self.ue_positions.shape[0]

def grid_positions(L: int, side: float) -> np.ndarray:
    n = math.isqrt(L)
    coords = (np.arange(n) + 0.5) * side / n
    xs, ys = np.meshgrid(coords, coords, indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()])

def three_d_distances(ap_positions: np.ndarray, ue_positions: np.ndarray, config: SystemConfig) -> np.ndarray:
    planar = np.linalg.norm(ue_positions[:, None, :] - ap_positions[None, :, :], axis=-1)
    return np.sqrt(planar**2 + (config.ap_height - config.ue_height) ** 2)

@timeit_log
def generate_topology(config: SystemConfig, rng: np.random.Generator) -> Topology:
    L, K, side = config.L, config.K, config.area_side
    if config.ap_placement == "auto" and math.isqrt(L) ** 2 == L:
        placement = "grid"
        aps = grid_positions(L, side)
    else:
        placement = "random"
        logger.info(f"L={L} is not a perfect square or random placement requested; APs placed uniformly")
        aps = rng.uniform(0.0, side, size=(L, 2))
    ues = rng.uniform(0.0, side, size=(K, 2))
    return Topology(
        ap_positions=_frozen(aps),
        ue_positions=_frozen(ues),
        distances=_frozen(three_d_distances(aps, ues, config)),
        placement=placement,
    )

# ------------- PROPAGATION ---------------------------------
def hata_constant(config: SystemConfig) -> float:
    """Frequency/height constant of the three-slope model (dB)."""
    lf = math.log10(config.f_mhz)
    return (
        46.3
        + 33.9 * lf
        - 13.82 * math.log10(config.ap_height)
        - (1.1 * lf - 0.7) * config.ue_height
        + (1.56 * lf - 0.8)
    )

def path_loss_db(d, config: SystemConfig):
    """
    Three-slope channel gain in dB (negative, non-increasing in d).
    Distances are in meters; the logarithms take kilometers.
    """
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError(f"path_loss_db needs positive distances, got min {np.min(d)}")
    const = hata_constant(config)
    d_km = d / 1000.0
    d0_km, d1_km = config.d0 / 1000.0, config.d1 / 1000.0
    far = -const - 35.0 * np.log10(d_km)
    mid = -const - 15.0 * math.log10(d1_km) - 20.0 * np.log10(d_km)
    near = -const - 15.0 * math.log10(d1_km) - 20.0 * math.log10(d0_km)
    pl = np.where(d > config.d1, far, np.where(d > config.d0, mid, near))
    return float(pl) if pl.ndim == 0 else pl

def rician_k_factor(d: np.ndarray, config: SystemConfig) -> np.ndarray:
    model = config.rician
    if model.model == "constant":
        return np.full(np.shape(d), model.k_factor, dtype=float)
    return 10.0 ** ((model.intercept_db - model.slope_db_per_m * np.asarray(d, dtype=float)) / 10.0)

def bearings(topology: Topology) -> np.ndarray:
    delta = topology.ue_positions[:, None, :] - topology.ap_positions[None, :, :]
    return np.arctan2(delta[..., 1], delta[..., 0])

def steering_vector(phi: float, N: int) -> np.ndarray:
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return np.exp(1j * np.pi * np.arange(N) * np.sin(phi))

def steering_vectors(phi: np.ndarray, N: int) -> np.ndarray:
    """Half-wavelength ULA responses, shape phi.shape + (N,)."""
    return np.exp(1j * np.pi * np.arange(N) * np.sin(np.asarray(phi))[..., None])

# ------------- LARGE-SCALE MODEL ---------------------------
@dataclass(frozen=True)
class LargeScaleModel:
    N: int
    zeta: np.ndarray        # (K, L)
    K_factor: np.ndarray    # (K, L)
    beta: np.ndarray        # (K, L) NLoS variance
    varsigma: np.ndarray    # (K, L) LoS power
    phi: np.ndarray         # (K, L)
    gamma: np.ndarray       # (K, L) estimate variance
    upsilon: np.ndarray     # (K, L) error variance
    c: np.ndarray           # (K, L) MMSE scalars
    alpha: np.ndarray       # (K, K, L), alpha[i, k, l]
    pilot_index: np.ndarray # (K,)
    same_pilot: np.ndarray  # (K, K) bool
    los: np.ndarray         # (K, L, N) mean channels sqrt(varsigma) h
    pilot_gain: float       # sqrt(tau_p P_p)
    sigma2: float
    shadowing_db: np.ndarray

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def L(self) -> int:
        return self.beta.shape[1]

    def permute_aps(self, order) -> "LargeScaleModel":
        order = np.asarray(order)
        return from_coefficients(
            self.beta[:, order], self.varsigma[:, order], self.phi[:, order], self.pilot_index,
            self.N, self.pilot_gain, self.sigma2, shadowing_db=self.shadowing_db[:, order],
        )

def from_coefficients(
    beta: np.ndarray,
    varsigma: np.ndarray,
    phi: np.ndarray,
    pilot_index: np.ndarray,
    N: int,
    pilot_gain: float,
    sigma2: float,
    *,
    shadowing_db: np.ndarray | None = None,
) -> LargeScaleModel:
    """Derives estimation statistics from (beta, varsigma, phi) and the pilot reuse pattern."""
    beta = np.asarray(beta, dtype=float)
    varsigma = np.asarray(varsigma, dtype=float)
    phi = np.asarray(phi, dtype=float)
    pilot_index = np.asarray(pilot_index, dtype=int)
    same_pilot = pilot_index[:, None] == pilot_index[None, :]

    received = pilot_gain**2 * (same_pilot.astype(float) @ beta) + sigma2
    c = pilot_gain * beta / received
    gamma = pilot_gain * beta * c
    upsilon = np.maximum(beta - gamma, 0.0)

    ratio = np.divide(beta[:, None, :], beta[None, :, :], out=np.zeros((beta.shape[0],) * 2 + beta.shape[1:]),
                      where=beta[None, :, :] > 0)
    alpha = np.where(same_pilot[:, :, None], ratio, 0.0)
    idx = np.arange(beta.shape[0])
    alpha[idx, idx, :] = 1.0

    zeta = beta + varsigma
    k_factor = np.divide(varsigma, beta, out=np.full_like(beta, np.inf), where=beta > 0)
    los = np.sqrt(varsigma)[..., None] * steering_vectors(phi, N)
    if shadowing_db is None:
        shadowing_db = np.zeros_like(beta)
    return LargeScaleModel(
        N=N,
        zeta=_frozen(zeta),
        K_factor=_frozen(k_factor),
        beta=_frozen(beta),
        varsigma=_frozen(varsigma),
        phi=_frozen(phi),
        gamma=_frozen(gamma),
        upsilon=_frozen(upsilon),
        c=_frozen(c),
        alpha=_frozen(alpha),
        pilot_index=_frozen(pilot_index),
        same_pilot=_frozen(same_pilot),
        los=_frozen(los),
        pilot_gain=float(pilot_gain),
        sigma2=float(sigma2),
        shadowing_db=_frozen(np.asarray(shadowing_db, dtype=float)),
    )

def from_fading(
    zeta: np.ndarray,
    k_factor: np.ndarray,
    phi: np.ndarray,
    pilots: "PilotAssignment",
    config: SystemConfig,
    shadowing_db: np.ndarray | None = None,
) -> LargeScaleModel:
    beta = zeta / (k_factor + 1.0)
    ls = from_coefficients(
        beta, beta * k_factor, phi, pilots.pilot_index, config.N,
        math.sqrt(config.tau_p * config.P_p), config.noise_power, shadowing_db=shadowing_db,
    )
    # keep the drawn values so a reload reproduces them bit for bit
    return replace(ls, zeta=_frozen(np.array(zeta, dtype=float)), K_factor=_frozen(np.array(k_factor, dtype=float)))

@timeit_log
def large_scale(
    topology: Topology,
    config: SystemConfig,
    rng: np.random.Generator,
    pilots: "PilotAssignment",
) -> LargeScaleModel:
    pl = path_loss_db(topology.distances, config)
    shadowing = rng.normal(0.0, config.shadow_std_db, size=pl.shape) if config.shadow_std_db > 0 else np.zeros_like(pl)
    zeta = 10.0 ** ((pl + shadowing) / 10.0)
    return from_fading(zeta, rician_k_factor(topology.distances, config), bearings(topology), pilots, config, shadowing)

# ------------- SERIALIZATION -------------------------------
def topology_to_file(topology: Topology, ls: LargeScaleModel, config_digest: str) -> TopologyFile:
    return TopologyFile(
        config_hash=config_digest,
        L=topology.L,
        K=topology.K,
        N=ls.N,
        placement=topology.placement,
        ap_positions=topology.ap_positions.tolist(),
        ue_positions=topology.ue_positions.tolist(),
        distances=topology.distances.ravel().tolist(),
        zeta=ls.zeta.ravel().tolist(),
        K_factor=ls.K_factor.ravel().tolist(),
        phi=ls.phi.ravel().tolist(),
        shadowing_db=ls.shadowing_db.ravel().tolist(),
        pilot_index=ls.pilot_index.tolist(),
    )

def topology_from_file(tf: TopologyFile, config: SystemConfig) -> tuple[Topology, dict[str, np.ndarray]]:
    if (tf.L, tf.K) != (config.L, config.K):
        raise ValueError(f"topology file has L={tf.L}, K={tf.K}; config expects L={config.L}, K={config.K}")
    expected = deployment_hash(config)
    if tf.config_hash != expected:
        raise ValueError(f"topology file was written for config {tf.config_hash}, this config hashes to {expected}")
    pilots = np.array(tf.pilot_index, dtype=int)
    if pilots.size != tf.K or pilots.min(initial=0) < 0 or pilots.max(initial=0) >= config.tau_p:
        raise ValueError(f"topology file pilot_index {tf.pilot_index} does not fit K={tf.K}, tau_p={config.tau_p}")
    shape = (tf.K, tf.L)
    topology = Topology(
        ap_positions=_frozen(np.array(tf.ap_positions, dtype=float)),
        ue_positions=_frozen(np.array(tf.ue_positions, dtype=float)),
        distances=_frozen(np.array(tf.distances, dtype=float).reshape(shape)),
        placement=tf.placement,
    )
    fading = {
        "zeta": np.array(tf.zeta, dtype=float).reshape(shape),
        "K_factor": np.array(tf.K_factor, dtype=float).reshape(shape),
        "phi": np.array(tf.phi, dtype=float).reshape(shape),
        "shadowing_db": np.array(tf.shadowing_db, dtype=float).reshape(shape),
        "pilot_index": pilots,
    }
    return topology, fading
