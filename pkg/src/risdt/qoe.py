"""Perception quality, three-stage round-trip latency, QoE and MDP reward."""

import math
from dataclasses import dataclass

from .config import SystemConfig


@dataclass(frozen=True)
class LatencyBreakdown:
    """Uplink / processing / downlink latency components in seconds."""

    uplink: float
    processing: float
    downlink: float

    @property
    def total(self) -> float:
        return self.uplink + self.processing + self.downlink


@dataclass(frozen=True)
class QoEResult:
    """Per-user outcome of one slot."""

    perception: float    # log perception score
    latency: float       # round-trip seconds as scored
    qoe: float
    feasible: bool       # latency within tolerance


def perception_quality(resolution: float, resolution_min: float) -> float:
    """Log-law perception score ln(E / E_min); zero at the minimum resolution."""
    if resolution < resolution_min:
        raise ValueError(
            f"resolution {resolution} below minimum {resolution_min}")
    return math.log(resolution / resolution_min)


def latency_breakdown(payload_bits: float, rate_ul: float, resolution: float,
                      compute: float, rate_dl: float,
                      cfg: SystemConfig) -> LatencyBreakdown:
    """Three-stage latency: payload upload, rendering, feedback download.

    Non-positive rates or compute map to infinite components.
    """
    uplink = payload_bits / rate_ul if rate_ul > 0 else math.inf
    processing = (cfg.per_sample_bits * cfg.cycles_per_bit * resolution / compute
                  if compute > 0 else math.inf)
    downlink = (cfg.feedback_bits_per_resolution * resolution / rate_dl
                if rate_dl > 0 else math.inf)
    return LatencyBreakdown(uplink=uplink, processing=processing,
                            downlink=downlink)


def qoe_score(weight_subjective: float, weight_objective: float,
              perception: float, latency: float,
              perception_max: float, latency_max: float) -> float:
    """Weighted mix of normalized perception and latency slack.

    Not clamped: latency beyond the tolerance drives the objective term
    negative.
    """
    return (weight_subjective * perception / perception_max +
            weight_objective * (1.0 - latency / latency_max))


def reward(qoe_results, power_ok: bool, penalty_coeff: float,
           latency_max: float) -> float:
    """Slot reward.

    With the power budget met: sum of QoE minus penalty_coeff times L_max for
    every user whose latency exceeds the tolerance.  With the budget violated:
    the negated QoE sum.
    """
    total_qoe = sum(q.qoe for q in qoe_results)
    if not power_ok:
        return -total_qoe
    penalty = sum(latency_max for q in qoe_results if q.latency > latency_max)
    return total_qoe - penalty_coeff * penalty
