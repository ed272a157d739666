import numpy as np
import pytest

from module.channel_module import PilotAssignment
from module.schema_json import SystemConfig
from module.topology_module import from_coefficients
from module.wpt_module import PowerControl

@pytest.fixture
def small_config() -> SystemConfig:
    return SystemConfig(L=4, K=4, N=4, tau_p=2, seed=3)

@pytest.fixture
def rayleigh_single():
    """One UE, one AP, one antenna, no LoS: gamma = upsilon = 0.5."""
    ls = from_coefficients(
        beta=np.array([[1.0]]), varsigma=np.array([[0.0]]), phi=np.array([[0.0]]),
        pilot_index=np.array([0]), N=1, pilot_gain=1.0, sigma2=1.0,
    )
    pilots = PilotAssignment(pilot_index=np.array([0]), tau_p=1)
    return ls, pilots

@pytest.fixture
def shared_pilot_instance():
    """Three UEs over two APs with LoS; UEs 0 and 2 share a pilot."""
    beta = np.array([[0.8, 0.3], [0.5, 1.2], [0.4, 0.9]])
    varsigma = np.array([[0.6, 0.0], [0.2, 0.7], [1.1, 0.3]])
    phi = np.array([[0.3, -0.8], [1.1, 0.2], [-0.4, 0.9]])
    pilot_index = np.array([0, 1, 0])
    ls = from_coefficients(beta, varsigma, phi, pilot_index, N=3, pilot_gain=1.0, sigma2=0.4)
    pilots = PilotAssignment(pilot_index=pilot_index, tau_p=2)
    pc = PowerControl(eta=np.array([[0.5, 0.8], [1.0, 0.4], [0.7, 0.6]]))
    return ls, pilots, pc
