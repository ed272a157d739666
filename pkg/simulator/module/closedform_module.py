"""
Analytical statistics of the received RF power and the harvested energy.

The RF power at UE k is I_k = sum_i |X_i|^2 with X_i = sum_l a_il T_il,
T_il = ghat_il^H g_kl and a_il = kappa_il sqrt(eta_il). Every T_il is a
bilinear form of jointly Gaussian vectors with known means, so all moments of
I_k follow from joint cumulants of such forms. For zero-mean-fluctuation
vectors with per-element covariance C(x, y) and mean Gram D(x, y) = d_x^H d_y,
the joint cumulant of n bilinear factors (L_r, R_r) is

    sum over cyclic orders of   N * prod_m C(R_m, L_{m+1})            (closed loops)
  + sum over linear orders of   D(L_first, R_last) * prod_m C(R_m, L_{m+1})

Factors at different APs are independent, so cumulants of X_i add over l.
"""
from dataclasses import dataclass
from itertools import permutations
from typing import Literal, Optional, Sequence

import numpy as np

from decorators import logger, timeit_log
from module.schema_json import SystemConfig
from module.topology_module import LargeScaleModel
from module.wpt_module import CircuitBank, PowerControl, circuit_bank, logistic, precoder_weights

Provenance = Literal["analytical", "empirical"]

@dataclass(frozen=True)
class HarvestStatistics:
    mean_I: np.ndarray  # (K,) W
    var_I: np.ndarray   # (K,) W^2
    mean_E: np.ndarray  # (K,) J
    var_E: np.ndarray   # (K,) J^2
    provenance: Provenance

# ------------- MEAN GRAM / PER-AP KERNELS ------------------
def los_gram(ls: LargeScaleModel) -> np.ndarray:
    """gram[u, v, l] = (sqrt(varsigma_ul) h_ul)^H (sqrt(varsigma_vl) h_vl)."""
    return np.einsum("uln,vln->uvl", ls.los.conj(), ls.los)

def _same_ap_terms(ls: LargeScaleModel, gram: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """
    Returns (second, first), both indexed [k, i, l]:
      first  = E{T_il}       = N (zeta rho + alpha gamma_kl)
      second = E{|T_il|^2}   = |first|^2 + N (beta_kl gamma_il + varsigma_il beta_kl + varsigma_kl gamma_il)
    The alpha term is zero for UEs on different pilots.
    """
    gram = los_gram(ls) if gram is None else gram
    N = ls.N
    zeta_rho = gram.transpose(1, 0, 2) / N
    alpha_gamma = ls.alpha.transpose(1, 0, 2) * ls.gamma[:, None, :]
    first = N * (zeta_rho + alpha_gamma)
    beta_k, vs_k, gamma_k = ls.beta[:, None, :], ls.varsigma[:, None, :], ls.gamma[:, None, :]
    gamma_i, vs_i = ls.gamma[None, :, :], ls.varsigma[None, :, :]
    second = np.abs(first) ** 2 + N * (beta_k * gamma_i + vs_i * beta_k + vs_k * gamma_i)
    return second, first

def quadform_mean_same_ap(k: int, i: int, l: int, ls: LargeScaleModel) -> float:
    second, _ = _same_ap_terms(ls)
    return float(second[k, i, l])

def quadform_mean_cross_ap(k: int, i: int, l: int, lp: int, ls: LargeScaleModel) -> complex:
    """E{T_il conj(T_il')}; complex in general, its real part enters the RF power."""
    if l == lp:
        raise ValueError(f"quadform_mean_cross_ap needs two distinct APs, got l = l' = {l}")
    _, first = _same_ap_terms(ls)
    return complex(first[k, i, l] * np.conj(first[k, i, lp]))

# ------------- CUMULANT ENGINE -----------------------------
# slots: "g" true channel of the observed UE, "i"/"j" estimates indexed on axis 0/1
_FACTOR_T_I = ("i", "g")
_FACTOR_TBAR_I = ("g", "i")
_FACTOR_T_J = ("j", "g")
_FACTOR_TBAR_J = ("g", "j")

class _ObservedUe:
    """Per-AP joint cumulants of T/conj(T) factors for one observed UE, arrays (K, K, L)."""

    def __init__(self, ls: LargeScaleModel, k: int, gram: np.ndarray):
        self.N = ls.N
        s = np.sqrt(ls.gamma)
        same = ls.same_pilot.astype(float)
        cross_g = same[k][:, None] * s * s[k][None, :]  # (K, L): cov(g_k, ghat_u)
        self._cov = {
            ("g", "g"): ls.beta[k][None, None, :],
            ("g", "i"): cross_g[:, None, :],
            ("g", "j"): cross_g[None, :, :],
            ("i", "i"): (s**2)[:, None, :],
            ("j", "j"): (s**2)[None, :, :],
            ("i", "j"): s[:, None, :] * s[None, :, :] * same[:, :, None],
        }
        diag = np.einsum("uul->ul", gram)
        self._gram = {
            ("g", "g"): gram[k, k][None, None, :],
            ("i", "g"): gram[:, k][:, None, :],
            ("g", "i"): gram[k, :][:, None, :],
            ("j", "g"): gram[:, k][None, :, :],
            ("g", "j"): gram[k, :][None, :, :],
            ("i", "i"): diag[:, None, :],
            ("j", "j"): diag[None, :, :],
            ("i", "j"): gram,
            ("j", "i"): gram.transpose(1, 0, 2),
        }

    def cov(self, x: str, y: str) -> np.ndarray:
        # real and symmetric for this model
        return self._cov[(x, y)] if (x, y) in self._cov else self._cov[(y, x)]

    def per_ap(self, factors: Sequence[tuple[str, str]]) -> np.ndarray:
        n = len(factors)
        total = 0.0
        head, rest = factors[0], factors[1:]
        for perm in permutations(rest):
            order = (head,) + perm
            term = self.N
            for m in range(n):
                term = term * self.cov(order[m][1], order[(m + 1) % n][0])
            total = total + term
        for order in permutations(factors):
            term = self._gram[(order[0][0], order[-1][1])]
            for m in range(n - 1):
                term = term * self.cov(order[m][1], order[m + 1][0])
            total = total + term
        return total

def _axis_weight(factor: tuple[str, str], weights: np.ndarray) -> np.ndarray:
    axis = factor[0] if factor[0] != "g" else factor[1]
    return weights[:, None, :] if axis == "i" else weights[None, :, :]

def _summed(ue: _ObservedUe, factors: Sequence[tuple[str, str]], weights: np.ndarray) -> np.ndarray:
    """Joint cumulant of the AP-summed forms X (weights a_il), shape (K, K)."""
    scale = 1.0
    for f in factors:
        scale = scale * _axis_weight(f, weights)
    return np.sum(scale * ue.per_ap(factors), axis=-1)

def _product_covariance(c: dict) -> np.ndarray:
    """Cov(S1 S2, S3 S4) from joint cumulants keyed by index strings."""
    return (
        c["1234"]
        + c["13"] * c["24"] + c["14"] * c["23"]
        + c["1"] * c["234"] + c["2"] * c["134"] + c["3"] * c["124"] + c["4"] * c["123"]
        + c["1"] * c["3"] * c["24"] + c["1"] * c["4"] * c["23"]
        + c["2"] * c["3"] * c["14"] + c["2"] * c["4"] * c["13"]
    )

_LABELS = {"1": _FACTOR_T_I, "2": _FACTOR_TBAR_I, "3": _FACTOR_T_J, "4": _FACTOR_TBAR_J}
_NEEDED = ("1", "2", "3", "4", "13", "14", "23", "24", "123", "124", "134", "234", "1234")

def _pair_cumulants(ue: _ObservedUe, weights: Optional[np.ndarray]) -> dict:
    out = {}
    for key in _NEEDED:
        factors = [_LABELS[ch] for ch in key]
        out[key] = ue.per_ap(factors) if weights is None else _summed(ue, factors, weights)
    return out

def _served_weights(ls: LargeScaleModel, pc: PowerControl, served_set: Optional[Sequence[int]]) -> np.ndarray:
    weights = precoder_weights(ls, pc)
    if served_set is not None:
        mask = np.zeros(ls.K, dtype=bool)
        mask[list(served_set)] = True
        weights = np.where(mask[:, None], weights, 0.0)
    return weights

# ------------- RF POWER MOMENTS ----------------------------
@timeit_log
def mean_rf_power(ls: LargeScaleModel, pc: PowerControl, served_set: Optional[Sequence[int]] = None) -> np.ndarray:
    weights = _served_weights(ls, pc, served_set)
    second, first = _same_ap_terms(ls)
    a = weights[None, :, :]
    # same-AP fluctuation plus the full coherent sum over AP pairs
    fluct = np.sum(a**2 * (second - np.abs(first) ** 2), axis=(1, 2))
    coherent = np.sum(np.abs(np.sum(a * first, axis=2)) ** 2, axis=1)
    return fluct + coherent

def _exact_variance(ls: LargeScaleModel, weights: np.ndarray) -> np.ndarray:
    gram = los_gram(ls)
    var = np.zeros(ls.K)
    for k in range(ls.K):
        c = _pair_cumulants(_ObservedUe(ls, k, gram), weights)
        var[k] = np.sum(_product_covariance(c)).real
    return var

@timeit_log
def var_rf_power(
    ls: LargeScaleModel,
    pc: PowerControl,
    served_set: Optional[Sequence[int]] = None,
    method: Literal["exact", "reduced"] = "exact",
) -> np.ndarray:
    weights = _served_weights(ls, pc, served_set)
    if method == "exact":
        var = _exact_variance(ls, weights)
    elif method == "reduced":
        var = _reduced_variance(ls, weights)
    else:
        raise ValueError(f"unknown variance method {method!r}")
    return np.maximum(var, 0.0)

# ------------- KERNELS -------------------------------------
def _coh_all(ls: LargeScaleModel, k: int, gram: np.ndarray) -> np.ndarray:
    """Var(|T_il|^2) for every (i, l), shape (K, L)."""
    c = _pair_cumulants(_ObservedUe(ls, k, gram), None)
    idx = np.arange(ls.K)
    return _product_covariance(c)[idx, idx, :].real

def upsilon_coh(ls: LargeScaleModel, k: int, i: int, l: int) -> float:
    return float(_coh_all(ls, k, los_gram(ls))[i, l])

def _noncoh_all(ls: LargeScaleModel, k: int) -> np.ndarray:
    """E|T_l|^2 E|T_l'|^2 - |E T_l|^2 |E T_l'|^2, shape (K, L, L)."""
    second, first = _same_ap_terms(ls)
    sq, m2 = second[k], np.abs(first[k]) ** 2
    return sq[:, :, None] * sq[:, None, :] - m2[:, :, None] * m2[:, None, :]

def upsilon_noncoh(ls: LargeScaleModel, k: int, i: int, l: int, lp: int) -> float:
    if l == lp:
        raise ValueError(f"upsilon_noncoh needs two distinct APs, got l = l' = {l}")
    return float(_noncoh_all(ls, k)[i, l, lp])

@timeit_log
def rf_power_variance_terms(
    ls: LargeScaleModel, pc: PowerControl, served_set: Optional[Sequence[int]] = None
) -> dict[str, np.ndarray]:
    """Exact variance split into coherent, noncoherent and remainder parts, each (K,)."""
    weights = _served_weights(ls, pc, served_set)
    gram = los_gram(ls)
    off = ~np.eye(ls.L, dtype=bool)
    coherent = np.zeros(ls.K)
    noncoherent = np.zeros(ls.K)
    for k in range(ls.K):
        coherent[k] = np.sum(weights**4 * _coh_all(ls, k, gram))
        pair = (weights**2)[:, :, None] * (weights**2)[:, None, :]
        noncoherent[k] = np.sum((pair * _noncoh_all(ls, k))[:, off])
    total = _exact_variance(ls, weights)
    return {"coherent": coherent, "noncoherent": noncoherent, "remainder": total - coherent - noncoherent, "total": total}

# ------------- REDUCED KERNEL FORMS ------------------------
def _zr2(ls: LargeScaleModel, k: int, gram: np.ndarray) -> np.ndarray:
    # zeta^2 |rho|^2 for every (i, l)
    return np.abs(gram[:, k, :]) ** 2 / ls.N**2

def _coh_reduced_all(ls: LargeScaleModel, k: int, gram: np.ndarray) -> np.ndarray:
    N = ls.N
    a2 = ls.alpha[:, k, :] ** 2
    zr2 = _zr2(ls, k, gram)
    b, g, u, vk = ls.beta[k], ls.gamma[k], ls.upsilon[k], ls.varsigma[k]
    vi = ls.varsigma
    zeta2 = vk[None, :] * vi
    t1 = 2 * N**2 * (N * a2 * vk * g * zr2 + N * b * vi * zr2 + a2 * g * (b + N * g) * zr2 + a2 * b * g * zeta2)
    t2 = N**2 * (a2**2 * vk**2 * g**2 + b**2 * vi**2)
    t3 = 2 * a2 * g * N * (N + 1) * (a2 * vk * g * ((N + 1) * g + b) + vi * ((N - 1) * b * g + b**2 + 2 * g**2))
    t4 = N * a2**2 * g**2 * ((N + 1) * (N + 2) * g * ((N + 3) * g + 4 * u) + u**2 * (2 * N + 1) - (b + N * g) ** 2)
    return t1 + t2 + t3 + t4

def upsilon_coh_reduced(ls: LargeScaleModel, k: int, i: int, l: int) -> float:
    return float(_coh_reduced_all(ls, k, los_gram(ls))[i, l])

def _noncoh_reduced_all(ls: LargeScaleModel, k: int, gram: np.ndarray) -> np.ndarray:
    N = ls.N
    a2 = ls.alpha[:, k, :] ** 2          # (K, L)
    zr2 = _zr2(ls, k, gram)              # (K, L)
    b, g, vk = ls.beta[k], ls.gamma[k], ls.varsigma[k]
    nu = vk + g
    vi = ls.varsigma

    def at_l(x):
        return x[..., :, None]

    def at_lp(x):
        return x[..., None, :]

    u1 = at_lp(zr2) * N**2 * (at_l(a2) * at_l(g) * (at_l(b) + N * at_l(nu)) + N * at_l(b) * at_l(vi))
    u2 = at_l(zr2) * N**2 * (at_lp(a2) * at_lp(g) * (at_lp(b) + N * at_lp(nu)) + N * at_lp(b) * at_lp(vi))
    u3 = N**2 * (
        at_lp(a2) * at_l(b) * at_l(vi) * at_lp(g) * (at_lp(b) + at_lp(vk) + N * at_lp(g))
        + at_l(a2) * at_lp(b) * at_lp(vi) * at_l(g) * (at_l(b) + at_l(vk) + N * at_l(g))
    )
    u4 = N**2 * at_l(b) * at_lp(b) * at_l(vi) * at_lp(vi)
    u5 = N**2 * at_l(a2) * at_lp(a2) * at_l(g) * at_lp(g) * (
        (at_l(vk) + at_l(b)) * (at_lp(vk) + at_lp(b))
        + N * (at_l(g) * (at_lp(b) + at_lp(vk)) + at_lp(g) * (at_l(b) + at_l(vk)))
    )
    return u1 + u2 + u3 + u4 + u5

def upsilon_noncoh_reduced(ls: LargeScaleModel, k: int, i: int, l: int, lp: int) -> float:
    if l == lp:
        raise ValueError(f"upsilon_noncoh_reduced needs two distinct APs, got l = l' = {l}")
    return float(_noncoh_reduced_all(ls, k, los_gram(ls))[i, l, lp])

def _reduced_variance(ls: LargeScaleModel, weights: np.ndarray) -> np.ndarray:
    gram = los_gram(ls)
    off = ~np.eye(ls.L, dtype=bool)
    var = np.zeros(ls.K)
    for k in range(ls.K):
        coh = np.sum(weights**4 * _coh_reduced_all(ls, k, gram))
        pair = (weights**2)[:, :, None] * (weights**2)[:, None, :]
        var[k] = coh + np.sum((pair * _noncoh_reduced_all(ls, k, gram))[:, off])
    return var

# ------------- HARVESTED ENERGY ----------------------------
def logistic_derivatives(I, circuit) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lam = logistic(I, circuit)
    slope = lam * (1.0 - lam)
    return lam, circuit.a * slope, circuit.a**2 * slope * (1.0 - 2.0 * lam)

def mean_harvested_energy(mean_I, circuit, tau_h: float):
    return tau_h * circuit.psi * (logistic(mean_I, circuit) - circuit.varphi)

def var_harvested_energy(mean_I, var_I, circuit, tau_h: float, expansion: Literal["delta", "curvature"] = "delta"):
    lam, d1, d2 = logistic_derivatives(mean_I, circuit)
    if expansion == "curvature":
        curvature = d2 * lam + d1**2
    elif expansion == "delta":
        curvature = d1**2
    else:
        raise ValueError(f"unknown expansion {expansion!r}")
    var = (tau_h * circuit.psi) ** 2 * np.asarray(var_I, dtype=float) * curvature
    if np.any(var < 0):
        logger.warning(f"harvested-energy variance went negative ({np.min(var):.3e} J^2); clamped to 0")
        var = np.maximum(var, 0.0)
    return var

@timeit_log
def harvest_statistics(
    ls: LargeScaleModel,
    pc: PowerControl,
    config: SystemConfig,
    method: Literal["exact", "reduced"] = "exact",
    circuits: Optional[CircuitBank] = None,
) -> HarvestStatistics:
    circuits = circuit_bank(config) if circuits is None else circuits
    mean_I = mean_rf_power(ls, pc)
    var_I = var_rf_power(ls, pc, method=method)
    tau_h = config.tau_h_seconds
    return HarvestStatistics(
        mean_I=mean_I,
        var_I=var_I,
        mean_E=np.asarray(mean_harvested_energy(mean_I, circuits, tau_h)),
        var_E=np.asarray(var_harvested_energy(mean_I, var_I, circuits, tau_h, config.variance_expansion)),
        provenance="analytical",
    )
