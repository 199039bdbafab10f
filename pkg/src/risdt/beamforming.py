"""Zero-forcing receive/transmit beamforming and water-filling power allocation.

Receive and transmit directions are the channel pseudo-inverse, so inter-user
interference is nulled exactly; downlink powers come from a water-filling
closed form with per-user minimum-power floors, solved by bisection on the
strictly monotone total-power curve.  All operations are pure.
"""

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

# Gram matrices beyond this condition number raise instead of returning noise.
GRAM_CONDITION_LIMIT = 1.0e12

_WATERLEVEL_ITERATIONS = 128


class RankDeficientChannelError(ValueError):
    """Stacked channel matrix is too ill-conditioned for ZF."""


class InfeasiblePowerFloorsError(ValueError):
    """The minimum-power floors cannot be met within the power budget."""

    def __init__(self, required: float, budget: float):
        super().__init__(f"power floors need {required:.6g} W "
                         f"but the budget is {budget:.6g} W")
        self.required = required
        self.budget = budget


@dataclass(frozen=True)
class BeamformingSolution:
    """One slot's beamformers: directions, powers and the waterlevel."""

    receive: np.ndarray        # (M, K) columns v_k, or None if not attached
    transmit_dirs: np.ndarray  # (M, K) pseudo-inverse columns, unit leakage
    powers: np.ndarray         # (K,) received downlink powers p_k
    transmit: np.ndarray       # (M, K) = transmit_dirs @ diag(sqrt(p))
    effective_gains: np.ndarray  # (K,) diag of dirs^H dirs; transmit cost per unit p
    waterlevel: float          # common waterlevel (1/rho)


@dataclass(frozen=True)
class LinkRates:
    """Per-user SINRs and Shannon rates for both directions."""

    sinr_ul: np.ndarray
    sinr_dl: np.ndarray
    rate_ul: np.ndarray   # bit/s
    rate_dl: np.ndarray   # bit/s


def zf_receive(h_stack: np.ndarray) -> np.ndarray:
    """ZF matrix H (H^H H)^{-1} for a full-column-rank (M, K) channel stack.

    Satisfies H^H V = I_K; raises RankDeficientChannelError when the Gram
    matrix condition number exceeds GRAM_CONDITION_LIMIT.
    """
    h_stack = np.asarray(h_stack)
    gram = h_stack.conj().T @ h_stack
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
        raise RankDeficientChannelError(
            f"Gram condition number {cond:.3g} exceeds {GRAM_CONDITION_LIMIT:.0e}")
    return h_stack @ np.linalg.inv(gram)


def uplink_sinr(k: int, receive: np.ndarray, h_stack: np.ndarray,
                uplink_power: float, noise_ul: float) -> float:
    """Uplink SINR of user k under receive matrix V.

    Signal p |h_k^H v_k|^2 over v_k^H (sigma^2 I + sum_{m != k} p h_m h_m^H) v_k.
    """
    v_k = receive[:, k]
    h_k = h_stack[:, k]
    signal = uplink_power * np.abs(h_k.conj() @ v_k) ** 2
    m_ant = h_stack.shape[0]
    cov = noise_ul * np.eye(m_ant, dtype=complex)
    for m in range(h_stack.shape[1]):
        if m != k:
            h_m = h_stack[:, m]
            cov += uplink_power * np.outer(h_m, h_m.conj())
    denom = float(np.real(v_k.conj() @ cov @ v_k))
    return float(signal / denom)


def downlink_sinr(k: int, transmit: np.ndarray, h_stack: np.ndarray,
                  noise_dl: float) -> float:
    """Downlink SINR of user k: |h_k^H w_k|^2 / (sigma^2 + sum_{m!=k} |h_k^H w_m|^2)."""
    h_k = h_stack[:, k]
    gains = np.abs(h_k.conj() @ transmit) ** 2
    interference = float(np.sum(gains)) - float(gains[k])
    return float(gains[k] / (noise_dl + interference))


def rate(bandwidth: float, sinr) -> np.ndarray:
    """Shannon rate b * log2(1 + sinr) in bit/s."""
    return bandwidth * np.log1p(np.asarray(sinr, dtype=float)) / np.log(2.0)


def min_power(resolution: float, budget: float, feedback_bits: float,
              bandwidth: float, noise_dl: float) -> float:
    """Minimum received power meeting the downlink deadline.

    budget is the latency remaining after uplink and processing; a
    non-positive budget returns +inf (the deadline is already exhausted).
    """
    if budget <= 0:
        return np.inf
    exponent = feedback_bits * resolution / (bandwidth * budget) * np.log(2.0)
    if exponent > 700.0:   # would overflow float64; the floor is unmeetable
        return np.inf
    return noise_dl * np.expm1(exponent)


def water_fill(quality: np.ndarray, noise: np.ndarray, floors: np.ndarray,
               power_budget: float, weights: np.ndarray = None) -> tuple:
    """Water-filling with per-user floors.

    Solves p_k = (1/v_k) max(u_k * level - v_k * sigma_k^2, v_k * floor_k) with
    the waterlevel chosen so the weighted total sum_k v_k p_k equals the
    budget.  u_k defaults to 1 (the printed closed form); a weights vector
    enables the per-user-weighted variant.

    Returns (powers, waterlevel); raises InfeasiblePowerFloorsError when
    sum_k v_k * floor_k exceeds the budget.
    """
    v = np.asarray(quality, dtype=float)
    sigma = np.asarray(noise, dtype=float)
    p_min = np.asarray(floors, dtype=float)
    if np.any(v <= 0):
        raise ValueError("channel qualities must be strictly positive")
    if power_budget <= 0:
        raise ValueError("power budget must be strictly positive")
    u = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
    if np.any(u <= 0):
        raise ValueError("waterlevel weights must be strictly positive")

    baseline = v * sigma          # weighted cost of the noise offset
    floor_cost = v * p_min        # weighted cost of each floor
    required = float(np.sum(floor_cost))
    if not np.isfinite(required) or required > power_budget:
        raise InfeasiblePowerFloorsError(required, power_budget)

    def total(level):
        return float(np.sum(np.maximum(u * level - baseline, floor_cost)))

    hi = (power_budget + float(np.max(baseline)) + 1.0) / float(np.min(u))
    while total(hi) < power_budget:
        hi *= 2.0
    lo = 0.0
    for _ in range(_WATERLEVEL_ITERATIONS):
        mid = 0.5 * (lo + hi)
        if total(mid) < power_budget:
            lo = mid
        else:
            hi = mid
    level = 0.5 * (lo + hi)
    powers = np.maximum(u * level - baseline, floor_cost) / v
    return powers, level


def zf_transmit(h_stack: np.ndarray, resolutions: np.ndarray,
                latency_ul: np.ndarray, latency_pro: np.ndarray,
                cfg: SystemConfig, floors: np.ndarray = None,
                objective_weights: np.ndarray = None,
                receive: np.ndarray = None) -> BeamformingSolution:
    """Assemble the downlink ZF solution for one slot.

    Directions are the pseudo-inverse of the stacked downlink channels;
    powers come from water_fill with floors derived from min_power (or an
    explicit override).  The total transmit power sum_k ||w_k||^2 equals
    sum_k v_k p_k = P_max whenever the floors are feasible.
    """
    dirs = zf_receive(h_stack)
    gains = np.real(np.einsum("mk,mk->k", dirs.conj(), dirs))
    if floors is None:
        budget = cfg.latency_max - np.asarray(latency_ul) - np.asarray(latency_pro)
        floors = np.array([min_power(e, b, cfg.feedback_bits_per_resolution,
                                     cfg.bandwidth, cfg.noise_dl)
                           for e, b in zip(np.asarray(resolutions, dtype=float),
                                           budget)])
    weights = None
    if cfg.weighted_water_filling and objective_weights is not None:
        w = cfg.bandwidth / (cfg.feedback_bits_per_resolution *
                             np.asarray(resolutions, dtype=float) *
                             np.asarray(objective_weights, dtype=float))
        weights = w / np.mean(w)
    noise = np.full(h_stack.shape[1], cfg.noise_dl)
    powers, level = water_fill(gains, noise, floors, cfg.max_transmit_power,
                               weights=weights)
    transmit = dirs * np.sqrt(powers)[None, :]
    return BeamformingSolution(
        receive=receive, transmit_dirs=dirs, powers=powers, transmit=transmit,
        effective_gains=gains, waterlevel=level,
    )


def link_rates(receive: np.ndarray, h_ul: np.ndarray, transmit: np.ndarray,
               h_dl: np.ndarray, cfg: SystemConfig) -> LinkRates:
    """Evaluate both directions' SINRs and rates from assembled beamformers."""
    k_users = h_ul.shape[1]
    s_ul = np.array([uplink_sinr(k, receive, h_ul, cfg.uplink_power, cfg.noise_ul)
                     for k in range(k_users)])
    s_dl = np.array([downlink_sinr(k, transmit, h_dl, cfg.noise_dl)
                     for k in range(k_users)])
    return LinkRates(sinr_ul=s_ul, sinr_dl=s_dl,
                     rate_ul=rate(cfg.bandwidth, s_ul),
                     rate_dl=rate(cfg.bandwidth, s_dl))
