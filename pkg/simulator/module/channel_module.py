from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from decorators import logger
from module.topology_module import LargeScaleModel
from utils import save_json

PILOT_POLICIES = ("round_robin", "random")

@dataclass(frozen=True)
class PilotAssignment:
    pilot_index: np.ndarray  # (K,) 0-based pilot per UE
    tau_p: int

    @property
    def K(self) -> int:
        return self.pilot_index.shape[0]

    @property
    def sharing_sets(self) -> tuple[frozenset, ...]:
        return tuple(frozenset(np.flatnonzero(self.pilot_index == p).tolist()) for p in self.pilot_index)

    def shares(self, i: int, k: int) -> bool:
        return bool(self.pilot_index[i] == self.pilot_index[k])

def assign_pilots(K: int, tau_p: int, policy: str = "round_robin", rng: Optional[np.random.Generator] = None) -> PilotAssignment:
    if tau_p < 1:
        raise ValueError(f"tau_p must be >= 1, got {tau_p}")
    if policy == "round_robin":
        index = np.arange(K) % tau_p
    elif policy == "random":
        if rng is None:
            raise ValueError("random pilot policy needs an rng stream")
        index = rng.integers(0, tau_p, size=K)
    else:
        raise ValueError(f"unknown pilot policy {policy!r}, expected one of {PILOT_POLICIES}")
    index = np.array(index, dtype=int)
    index.setflags(write=False)
    return PilotAssignment(pilot_index=index, tau_p=tau_p)

def complex_normal(rng: np.random.Generator, shape: tuple, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric CN(0, variance) samples."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

@dataclass(frozen=True)
class TrueChannels:
    g: np.ndarray        # (..., K, L, N)
    tilde_g: np.ndarray  # (..., K, L, N) unit-variance NLoS draws

@dataclass(frozen=True)
class ChannelState:
    g: np.ndarray        # (..., K, L, N)
    g_hat: np.ndarray    # (..., K, L, N)
    tilde_g: np.ndarray
    noise: np.ndarray    # (..., tau_p, L, N) one draw per (pilot, AP)

def draw_channels(ls: LargeScaleModel, rng: np.random.Generator, batch: Optional[int] = None) -> TrueChannels:
    shape = (ls.K, ls.L, ls.N) if batch is None else (batch, ls.K, ls.L, ls.N)
    tilde_g = complex_normal(rng, shape)
    g = ls.los + np.sqrt(ls.beta)[..., None] * tilde_g
    return TrueChannels(g=g, tilde_g=tilde_g)

def estimate_channels(
    true: TrueChannels,
    ls: LargeScaleModel,
    pilots: PilotAssignment,
    rng: np.random.Generator,
) -> ChannelState:
    """MMSE estimates from the projected pilot signal, statistical form."""
    lead = true.tilde_g.shape[:-3]
    noise = complex_normal(rng, lead + (pilots.tau_p, ls.L, ls.N), ls.sigma2)

    onehot = (np.arange(pilots.tau_p)[:, None] == pilots.pilot_index[None, :]).astype(float)
    weighted = np.sqrt(ls.beta)[..., None] * true.tilde_g
    projected = ls.pilot_gain * np.einsum("pk,...kln->...pln", onehot, weighted) + noise
    g_hat = ls.los + ls.c[..., None] * projected[..., pilots.pilot_index, :, :]
    return ChannelState(g=true.g, g_hat=g_hat, tilde_g=true.tilde_g, noise=noise)

def dump_channel_state(state: ChannelState, path: str | Path) -> Path:
    """Writes one interval's channels as real/imag nested lists for inspection."""
    if state.g.ndim != 3:
        raise ValueError("dump_channel_state expects a single interval (K, L, N)")
    payload = {
        name: {"real": arr.real.tolist(), "imag": arr.imag.tolist()}
        for name, arr in (("g", state.g), ("g_hat", state.g_hat), ("noise", state.noise))
    }
    out = save_json(payload, path)
    logger.debug(f"channel state dumped to {out}")
    return out
