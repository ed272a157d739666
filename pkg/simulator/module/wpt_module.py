from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from module.channel_module import ChannelState
from module.schema_json import EhCircuit, SystemConfig
from module.topology_module import LargeScaleModel

class DegenerateChannelError(ValueError):
    pass

@dataclass(frozen=True)
class PowerControl:
    eta: np.ndarray  # (K, L) W

    def scaled(self, t: float) -> "PowerControl":
        return PowerControl(eta=self.eta * t)

@dataclass(frozen=True)
class CircuitBank:
    """Per-UE circuit constants as arrays; same attribute names as EhCircuit."""
    a: np.ndarray
    b: np.ndarray
    I_max: np.ndarray

    @property
    def varphi(self) -> np.ndarray:
        return expit(-self.a * self.b)

    @property
    def psi(self) -> np.ndarray:
        return self.I_max / (1.0 - self.varphi)

def stack_circuits(circuits: Sequence[EhCircuit]) -> CircuitBank:
    return CircuitBank(
        a=np.array([c.a for c in circuits], dtype=float),
        b=np.array([c.b for c in circuits], dtype=float),
        I_max=np.array([c.I_max for c in circuits], dtype=float),
    )

def circuit_bank(config: SystemConfig) -> CircuitBank:
    return stack_circuits([config.circuit_for(k) for k in range(config.K)])

def equal_power_control(config: SystemConfig) -> PowerControl:
    served = config.served
    eta = np.zeros((config.K, config.L))
    if served:
        eta[served, :] = config.P_d / len(served)
    return PowerControl(eta=eta)

def mrt_scalars(ls: LargeScaleModel) -> np.ndarray:
    power = ls.varsigma + ls.gamma
    if np.any(power <= 0):
        k, l = np.argwhere(power <= 0)[0]
        raise DegenerateChannelError(f"varsigma + gamma = 0 for UE {k}, AP {l}: MRT precoder undefined")
    return 1.0 / np.sqrt(ls.N * power)

def mrt_precoders(state: ChannelState, ls: LargeScaleModel) -> np.ndarray:
    return mrt_scalars(ls)[..., None] * state.g_hat

def precoder_weights(ls: LargeScaleModel, pc: PowerControl) -> np.ndarray:
    """kappa_il * sqrt(eta_il); UEs with eta = 0 contribute nothing."""
    served = pc.eta > 0
    kappa = np.zeros_like(pc.eta)
    if np.any(served):
        power = ls.varsigma + ls.gamma
        if np.any(power[served] <= 0):
            raise DegenerateChannelError("varsigma + gamma = 0 on a served (UE, AP) pair")
        kappa[served] = 1.0 / np.sqrt(ls.N * power[served])
    return kappa * np.sqrt(pc.eta)

def received_rf_energy(state: ChannelState, ls: LargeScaleModel, pc: PowerControl) -> np.ndarray:
    """Per-UE RF power (W), shape (..., K); energy symbols already averaged out."""
    weights = precoder_weights(ls, pc)
    beams = weights[..., None] * state.g_hat
    # amplitude[..., k, i] = sum_l a_il ghat_il^H g_kl
    amplitude = np.einsum("...iln,...kln->...ki", beams.conj(), state.g)
    return np.sum(np.abs(amplitude) ** 2, axis=-1)

def logistic(I, circuit) -> np.ndarray:
    return expit(circuit.a * (np.asarray(I, dtype=float) - circuit.b))

def harvest(I, circuit, tau_h_seconds: float):
    """Harvested DC energy (J) for RF input power I (W)."""
    I = np.asarray(I, dtype=float)
    if np.any(I < 0):
        raise ValueError(f"negative input power: min {np.min(I)}")
    energy = tau_h_seconds * circuit.psi * (logistic(I, circuit) - circuit.varphi)
    return float(energy) if np.ndim(energy) == 0 else energy
