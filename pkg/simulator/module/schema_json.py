import math
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

class EhCircuit(BaseModel):
    """Logistic rectifier: output DC power saturates at I_max, turning point b."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    a: float = Field(150.0, gt=0, description="steepness (1/W)")
    b: float = Field(0.014, gt=0, description="turning point (W)")
    I_max: float = Field(0.024, gt=0, description="maximum DC output (W)")

    @property
    def varphi(self) -> float:
        # 1/(1+e^{ab}) without overflow for large a*b
        return float(expit(-self.a * self.b))

    @property
    def psi(self) -> float:
        return self.I_max / (1.0 - self.varphi)

class RicianModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    model: Literal["distance", "constant"] = "distance"
    # distance model: K_dB = intercept_db - slope_db_per_m * d
    intercept_db: float = 13.0
    slope_db_per_m: float = 0.03
    k_factor: float = Field(0.0, ge=0, description="linear K used by the constant model")

class SystemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    L: int = Field(4, ge=1)
    K: int = Field(20, ge=1)
    N: int = Field(72, ge=1)

    tau_c: int = Field(200, ge=1)
    tau_p: int = Field(20, ge=1)
    tau_h: int = Field(100, ge=1)
    tau_d: int = Field(40, ge=0)
    tau_u: int = Field(40, ge=0)
    symbol_duration: float = Field(1e-3, gt=0)

    P_p: float = Field(0.1, ge=0)
    P_u: float = Field(0.1, ge=0)
    P_total: float = Field(10.0, ge=0)

    bandwidth_hz: float = Field(20e6, gt=0)
    noise_figure_db: float = 9.0
    sigma2: Optional[float] = Field(None, gt=0)

    area_side: float = Field(100.0, gt=0)
    ap_height: float = Field(15.0, gt=0)
    ue_height: float = Field(1.65, gt=0)
    f_mhz: float = Field(1900.0, gt=0)
    shadow_std_db: float = Field(8.0, ge=0)
    d0: float = Field(10.0, gt=0)
    d1: float = Field(50.0, gt=0)
    ap_placement: Literal["auto", "random"] = "auto"
    rician: RicianModel = Field(default_factory=RicianModel)

    circuit: EhCircuit = Field(default_factory=EhCircuit)
    circuits: Optional[List[EhCircuit]] = None
    energy_ues: Optional[List[int]] = None
    pilot_policy: Literal["round_robin", "random"] = "round_robin"
    variance_expansion: Literal["delta", "curvature"] = "delta"

    E_f: float = Field(0.3, gt=0)
    M_states: int = Field(2000, ge=2)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_constraints(self) -> "SystemConfig":
        problems = []
        budget = self.tau_p + self.tau_h + self.tau_d + self.tau_u
        if budget > self.tau_c:
            problems.append(f"tau_p + tau_h + tau_d + tau_u = {budget} exceeds tau_c = {self.tau_c}")
        if self.d1 <= self.d0:
            problems.append(f"d1 = {self.d1} must exceed d0 = {self.d0}")
        if self.circuits is not None and len(self.circuits) != self.K:
            problems.append(f"circuits has {len(self.circuits)} entries, expected K = {self.K}")
        if self.energy_ues is not None:
            bad = [k for k in self.energy_ues if not 0 <= k < self.K]
            if bad:
                problems.append(f"energy_ues out of range [0, {self.K}): {bad}")
            if len(set(self.energy_ues)) != len(self.energy_ues):
                problems.append("energy_ues contains duplicates")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def P_d(self) -> float:
        return self.P_total / self.L

    @property
    def noise_power(self) -> float:
        """sigma2 if given, else thermal noise over the bandwidth plus noise figure (W)."""
        if self.sigma2 is not None:
            return self.sigma2
        dbm = -174.0 + 10.0 * math.log10(self.bandwidth_hz) + self.noise_figure_db
        return 10.0 ** ((dbm - 30.0) / 10.0)

    @property
    def tau_h_seconds(self) -> float:
        return self.tau_h * self.symbol_duration

    @property
    def served(self) -> List[int]:
        return list(range(self.K)) if self.energy_ues is None else sorted(self.energy_ues)

    def circuit_for(self, k: int) -> EhCircuit:
        return self.circuit if self.circuits is None else self.circuits[k]

class SweepPoint(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    L: int = Field(ge=1)
    N: int = Field(ge=1)

class SweepSpec(BaseModel):
    """Either explicit (L, N) points or a constant-antenna generator."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    points: Optional[List[SweepPoint]] = None
    constant_antennas: Optional[int] = Field(None, ge=1)
    values: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check_points(self) -> "SweepSpec":
        if self.constant_antennas is None:
            if not self.points:
                raise ValueError("sweep needs either points or constant_antennas with values")
            if self.values is not None:
                raise ValueError("values is only used together with constant_antennas")
            return self
        if self.points is not None:
            raise ValueError("give either points or constant_antennas, not both")
        if not self.values:
            raise ValueError("constant_antennas needs a non-empty values list")
        bad = [L for L in self.values if L < 1 or self.constant_antennas % L]
        if bad:
            raise ValueError(f"L*N = {self.constant_antennas} gives non-integral N for L in {bad}")
        return self

    def resolved(self) -> List[SweepPoint]:
        if self.constant_antennas is None:
            return list(self.points)
        return [SweepPoint(L=L, N=self.constant_antennas // L) for L in self.values]

def default_sweep() -> SweepSpec:
    return SweepSpec(points=[SweepPoint(L=L, N=N) for L, N in ((4, 72), (9, 32), (16, 18), (25, 12), (36, 8))])

class OracleSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    instances: int = Field(50, ge=1)
    draws: int = Field(1_000_000, ge=10_000)
    batch: int = Field(20_000, ge=1000)
    max_L: int = Field(3, ge=1)
    max_N: int = Field(4, ge=1)
    max_K: int = Field(4, ge=1)
    z: float = Field(3.0, gt=0, description="single-check z; rows are Sidak-corrected from it")
    var_rel_tol: float = Field(0.05, ge=0)
    trajectories: int = Field(2000, ge=100)
    seed: int = Field(2024, ge=0)

class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    system: SystemConfig = Field(default_factory=SystemConfig)
    sweep: Optional[SweepSpec] = Field(default_factory=default_sweep)
    intervals: int = Field(2000, ge=0)
    topologies: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    out_dir: str = "static/runs"
    n_steps: List[int] = Field(default_factory=lambda: [100, 200, 500])
    oracle: OracleSettings = Field(default_factory=OracleSettings)

    @model_validator(mode="after")
    def _check_steps(self) -> "ExperimentSpec":
        if any(n < 0 for n in self.n_steps):
            raise ValueError(f"n_steps must be non-negative, got {self.n_steps}")
        return self

    def points(self) -> List[SystemConfig]:
        """One SystemConfig per sweep point, or the base config alone."""
        if self.sweep is None:
            return [self.system]
        base = self.system.model_dump()
        return [SystemConfig.model_validate({**base, "L": p.L, "N": p.N}) for p in self.sweep.resolved()]

class TopologyFile(BaseModel):
    """On-disk deployment: arrays are row-major K x L (positions are rows of x, y)."""
    model_config = ConfigDict(extra="forbid")

    config_hash: str
    L: int
    K: int
    N: int
    placement: Literal["grid", "random"]
    ap_positions: List[List[float]]
    ue_positions: List[List[float]]
    distances: List[float]
    zeta: List[float]
    K_factor: List[float]
    phi: List[float]
    shadowing_db: List[float]
    pilot_index: List[int]

class RunManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int
    config_hash: str
    intervals: int
    topology_id: int
    workers: int
    wall_time_s: float
    L: int
    N: int
    median_ue: Optional[int] = None
    variance_expansion: Literal["delta", "curvature"] = "delta"
    files: List[str] = Field(default_factory=list)
    system: dict
