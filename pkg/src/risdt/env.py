"""Per-scene interaction MDP: state assembly, action decoding, slot stepping.

A slot step composes the effective channels under the decided phase shifts,
solves the ZF receive/transmit problem with water-filled powers, scores QoE
and the reward, then draws the next slot's fades.  Infeasibilities never
raise: users whose deadline is already exhausted before the downlink lose
their power floor and take the latency penalty; jointly unaffordable finite
floors route the slot to the power-violation reward branch (scored with a
best-effort allocation and latency clamped at the tolerance, which keeps the
reward bounded above by K).
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import beamforming, channel, qoe
from .config import SceneSpec, SystemConfig

# Documented spread of raw (pre-squash) action samples used by the random and
# expert-search policies; sigmoid(+-2 sigma) spans most of each decision range.
RAW_ACTION_SCALE = 2.0


def action_dim(cfg: SystemConfig) -> int:
    """Raw action length: N phases + K resolutions + K compute logits."""
    return cfg.num_ris_elements + 2 * cfg.num_users


def feature_length(cfg: SystemConfig) -> int:
    """Flat state length: per user 2 weights + payload + Re/Im of both
    effective M-vectors + previous QoE, plus the slot index."""
    return cfg.num_users * (4 * cfg.num_antennas + 4) + 1


@dataclass(frozen=True)
class Decision:
    """Transformer-emitted variables: phases, resolutions, compute split."""

    phases: np.ndarray       # (N,) radians in [0, 2*pi)
    resolutions: np.ndarray  # (K,) in [E_min, E_max]
    compute: np.ndarray      # (K,) cycles/s, positive, sums to <= C

    def violations(self, cfg: SystemConfig) -> list:
        bad = []
        if np.any(self.phases < 0) or np.any(self.phases >= 2 * np.pi):
            bad.append("phases must lie in [0, 2*pi)")
        if (np.any(self.resolutions < cfg.resolution_min) or
                np.any(self.resolutions > cfg.resolution_max)):
            bad.append("resolutions out of range")
        if np.any(self.compute <= 0):
            bad.append("compute shares must be strictly positive")
        if np.sum(self.compute) > cfg.server_compute * (1 + 1e-12):
            bad.append("compute budget exceeded")
        return bad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def decode_action(raw: np.ndarray, cfg: SystemConfig) -> Decision:
    """Squash a raw vector into a feasible Decision.

    Layout [phases | resolutions | compute]: phases are 2*pi*sigmoid, the
    resolutions interpolate the allowed range through a sigmoid, and the
    compute split is a softmax over the full capacity, so the decoded decision
    satisfies the phase, resolution and compute constraints by construction.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (action_dim(cfg),):
        raise ValueError(f"raw action must have length {action_dim(cfg)}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw action must be finite")
    n, k = cfg.num_ris_elements, cfg.num_users
    phases = 2.0 * np.pi * _sigmoid(raw[:n])
    phases = np.minimum(phases, np.nextafter(2.0 * np.pi, 0.0))
    resolutions = (cfg.resolution_min +
                   (cfg.resolution_max - cfg.resolution_min) *
                   _sigmoid(raw[n:n + k]))
    logits = raw[n + k:]
    ex = np.exp(logits - np.max(logits))
    compute = cfg.server_compute * ex / np.sum(ex)
    return Decision(phases=phases, resolutions=resolutions, compute=compute)


@dataclass(frozen=True)
class State:
    """MDP state at one slot; carries the slot's full channel draw."""

    weights: np.ndarray        # (K, 2)
    payload_bits: np.ndarray   # (K,)
    channels: channel.ChannelSet
    observed_phases: np.ndarray  # theta under which effective channels are shown
    prev_qoe: np.ndarray       # (K,)
    slot: int                  # 1-based


def state_features(state: State, scene: SceneSpec, cfg: SystemConfig) -> np.ndarray:
    """Flat float64 feature vector; documented encoding.

    Per user: [w_subj, w_obj, payload_mb, Re/Im of effective uplink, Re/Im of
    effective downlink (scaled by cfg.channel_feature_scale), previous QoE],
    then the normalized slot index.
    """
    scale = cfg.channel_feature_scale
    parts = []
    for k in range(cfg.num_users):
        h_ul = state.channels.effective_ul[k] * scale
        h_dl = state.channels.effective_dl[k] * scale
        parts.append(np.concatenate([
            state.weights[k],
            [state.payload_bits[k] / 8.0e6],
            h_ul.real, h_ul.imag, h_dl.real, h_dl.imag,
            [state.prev_qoe[k]],
        ]))
    parts.append([state.slot / scene.horizon])
    return np.concatenate(parts)


@dataclass(frozen=True)
class SlotScore:
    """Everything produced by scoring one decision on one slot."""

    reward: float
    qoe_results: tuple          # K QoEResult
    solution: object            # BeamformingSolution or None (degenerate)
    power_ok: bool
    rates: object               # LinkRates or None
    latencies: tuple            # K LatencyBreakdown (raw, unclamped)

    @property
    def qoe_total(self) -> float:
        return sum(q.qoe for q in self.qoe_results)

    @property
    def any_latency_violation(self) -> bool:
        return any(not q.feasible for q in self.qoe_results)


def reset_state(scene: SceneSpec, cfg: SystemConfig,
                rng: np.random.Generator) -> State:
    """First-slot state; channels drawn under the all-zero default phases."""
    theta0 = channel.PhaseShiftMatrix(np.zeros(cfg.num_ris_elements))
    channels = channel.sample_channel_set(scene, cfg, theta0, rng)
    return State(
        weights=scene.weights_array(),
        payload_bits=scene.payload_array(),
        channels=channels,
        observed_phases=theta0.phases,
        prev_qoe=np.zeros(cfg.num_users),
        slot=1,
    )


def _latency_components(state, decision, rates_dl, rates_ul, cfg):
    lats = []
    for k in range(cfg.num_users):
        rate_dl = rates_dl[k]
        # Zero allocated power can only happen on floorless users; score their
        # downlink at the unit-SINR reference rate to keep latency finite.
        if rate_dl <= 0:
            rate_dl = cfg.bandwidth
        lats.append(qoe.latency_breakdown(
            state.payload_bits[k], rates_ul[k], decision.resolutions[k],
            decision.compute[k], rate_dl, cfg))
    return lats


def score_decision(state: State, decision: Decision, scene: SceneSpec,
                   cfg: SystemConfig) -> SlotScore:
    """Evaluate one decision on the state's frozen channel draw.

    Pure in all inputs; used both by step() and by search policies previewing
    candidate actions on the same slot.
    """
    theta = channel.PhaseShiftMatrix(decision.phases)
    channels = channel.compose_effective(state.channels, theta)
    h_ul = channels.effective_ul.T
    h_dl = channels.effective_dl.T
    k_users = cfg.num_users

    try:
        receive = beamforming.zf_receive(h_ul)
    except beamforming.RankDeficientChannelError:
        return _degenerate_score(state, decision, cfg)

    sinr_ul = np.array([beamforming.uplink_sinr(k, receive, h_ul,
                                                cfg.uplink_power, cfg.noise_ul)
                        for k in range(k_users)])
    rate_ul = beamforming.rate(cfg.bandwidth, sinr_ul)
    lat_ul = state.payload_bits / rate_ul
    lat_pro = (cfg.per_sample_bits * cfg.cycles_per_bit *
               decision.resolutions / decision.compute)
    budget = cfg.latency_max - lat_ul - lat_pro
    floors = np.array([beamforming.min_power(
        decision.resolutions[k], budget[k], cfg.feedback_bits_per_resolution,
        cfg.bandwidth, cfg.noise_dl) for k in range(k_users)])
    # Deadline-exhausted users cannot be saved by downlink power: drop their
    # floor (they take the latency penalty) and water-fill the rest.
    floors_eff = np.where(np.isfinite(floors), floors, 0.0)

    power_ok = True
    try:
        solution = beamforming.zf_transmit(
            h_dl, decision.resolutions, lat_ul, lat_pro, cfg,
            floors=floors_eff, objective_weights=state.weights[:, 1],
            receive=receive)
    except beamforming.InfeasiblePowerFloorsError:
        power_ok = False
        solution = beamforming.zf_transmit(
            h_dl, decision.resolutions, lat_ul, lat_pro, cfg,
            floors=np.zeros(k_users), receive=receive)

    rates = beamforming.LinkRates(
        sinr_ul=sinr_ul,
        sinr_dl=np.array([beamforming.downlink_sinr(k, solution.transmit, h_dl,
                                                    cfg.noise_dl)
                          for k in range(k_users)]),
        rate_ul=rate_ul,
        rate_dl=None,
    )
    rates = beamforming.LinkRates(rates.sinr_ul, rates.sinr_dl, rates.rate_ul,
                                  beamforming.rate(cfg.bandwidth, rates.sinr_dl))
    latencies = _latency_components(state, decision, rates.rate_dl,
                                    rates.rate_ul, cfg)
    results = _score_qoe(state, decision, latencies, power_ok, cfg)
    slot_reward = qoe.reward(results, power_ok, cfg.penalty_coeff,
                             cfg.latency_max)
    return SlotScore(reward=slot_reward, qoe_results=tuple(results),
                     solution=solution, power_ok=power_ok, rates=rates,
                     latencies=tuple(latencies))


def _score_qoe(state, decision, latencies, power_ok, cfg):
    results = []
    for k in range(cfg.num_users):
        perception = qoe.perception_quality(decision.resolutions[k],
                                            cfg.resolution_min)
        raw_total = latencies[k].total
        # Violation branch scores with latency clamped at the tolerance so
        # the negated-QoE penalty stays within [-K, 0].
        scored = raw_total if power_ok else min(raw_total, cfg.latency_max)
        score = qoe.qoe_score(state.weights[k, 0], state.weights[k, 1],
                              perception, scored, cfg.perception_max,
                              cfg.latency_max)
        results.append(qoe.QoEResult(perception=perception, latency=scored,
                                     qoe=score,
                                     feasible=raw_total <= cfg.latency_max))
    return results


def _degenerate_score(state, decision, cfg):
    """Measure-zero fallback: ZF impossible, scored as a power violation."""
    latencies = [qoe.LatencyBreakdown(math.inf, 0.0, math.inf)
                 for _ in range(cfg.num_users)]
    results = _score_qoe(state, decision, latencies, False, cfg)
    slot_reward = qoe.reward(results, False, cfg.penalty_coeff, cfg.latency_max)
    return SlotScore(reward=slot_reward, qoe_results=tuple(results),
                     solution=None, power_ok=False, rates=None,
                     latencies=tuple(latencies))


@dataclass(frozen=True)
class StepOutcome:
    next_state: State
    reward: float
    qoe_results: tuple
    solution: object
    power_ok: bool
    done: bool


def step(state: State, decision: Decision, scene: SceneSpec, cfg: SystemConfig,
         rng: np.random.Generator) -> StepOutcome:
    """Advance one slot; all infeasibilities become reward penalties."""
    score = score_decision(state, decision, scene, cfg)
    next_channels = channel.sample_channel_set(
        scene, cfg, channel.PhaseShiftMatrix(decision.phases), rng)
    next_state = State(
        weights=state.weights,
        payload_bits=state.payload_bits,
        channels=next_channels,
        observed_phases=decision.phases,
        prev_qoe=np.array([q.qoe for q in score.qoe_results]),
        slot=state.slot + 1,
    )
    return StepOutcome(next_state=next_state, reward=score.reward,
                       qoe_results=score.qoe_results, solution=score.solution,
                       power_ok=score.power_ok, done=state.slot >= scene.horizon)


def rtg_init(scene: SceneSpec) -> float:
    """Maximum total reward: the weight sums (each 1) over users and slots."""
    return scene.horizon * float(np.sum(scene.weights_array()))


class Policy:
    """Minimal protocol driven by rollout()."""

    def begin_episode(self, scene: SceneSpec, cfg: SystemConfig,
                      initial_rtg: float) -> None:
        pass

    def act(self, state: State, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def record(self, features: np.ndarray, raw_action: np.ndarray,
               reward: float) -> None:
        pass


class RandomPolicy(Policy):
    """Raw actions drawn i.i.d. from N(0, RAW_ACTION_SCALE^2)."""

    def __init__(self, cfg: SystemConfig, seed):
        self._dim = action_dim(cfg)
        self._rng = np.random.default_rng(seed)

    def act(self, state, features):
        return self._rng.normal(0.0, RAW_ACTION_SCALE, self._dim)


@dataclass
class Episode:
    """One rollout: aligned per-slot arrays plus evaluation extras."""

    scene_id: int
    seed: int
    rtg: np.ndarray        # (T,) returns-to-go before each slot's reward
    states: np.ndarray     # (T, S)
    actions: np.ndarray    # (T, A) raw vectors in the decode_action layout
    rewards: np.ndarray    # (T,)
    qoe_sums: np.ndarray   # (T,) per-slot sum of scored QoE
    power_ok: np.ndarray   # (T,) bool
    latency_violations: np.ndarray  # (T,) bool, any user over tolerance

    @property
    def total_return(self) -> float:
        return float(np.sum(self.rewards))

    @property
    def total_qoe(self) -> float:
        return float(np.sum(self.qoe_sums))

    @property
    def violation_rate(self) -> float:
        bad = ~self.power_ok | self.latency_violations
        return float(np.mean(bad))

    def __len__(self) -> int:
        return len(self.rewards)


def rollout(policy: Policy, scene: SceneSpec, cfg: SystemConfig,
            seed: int) -> Episode:
    """Run one full episode; deterministic given (policy state, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    state = reset_state(scene, cfg, rng)
    rtg = rtg_init(scene)
    policy.begin_episode(scene, cfg, rtg)

    rtgs, feats_list, raws, rewards = [], [], [], []
    qoe_sums, power_flags, lat_flags = [], [], []
    done = False
    while not done:
        features = state_features(state, scene, cfg)
        raw = np.asarray(policy.act(state, features), dtype=float)
        decision = decode_action(raw, cfg)
        outcome = step(state, decision, scene, cfg, rng)
        policy.record(features, raw, outcome.reward)

        rtgs.append(rtg)
        feats_list.append(features)
        raws.append(raw)
        rewards.append(outcome.reward)
        qoe_sums.append(sum(q.qoe for q in outcome.qoe_results))
        power_flags.append(outcome.power_ok)
        lat_flags.append(any(not q.feasible for q in outcome.qoe_results))

        rtg -= outcome.reward
        state = outcome.next_state
        done = outcome.done

    return Episode(
        scene_id=scene.scene_id, seed=int(seed),
        rtg=np.array(rtgs), states=np.stack(feats_list),
        actions=np.stack(raws), rewards=np.array(rewards),
        qoe_sums=np.array(qoe_sums), power_ok=np.array(power_flags),
        latency_violations=np.array(lat_flags),
    )


# ---------------------------------------------------------------------------
# Episode serialization: JSON lines, one record per slot.

def episode_to_jsonl(episode: Episode) -> str:
    lines = []
    for t in range(len(episode)):
        record = {
            "scene_id": episode.scene_id,
            "t": t + 1,
            "rtg": float(episode.rtg[t]),
            "state": [float(x) for x in episode.states[t]],
            "decision": [float(x) for x in episode.actions[t]],
            "reward": float(episode.rewards[t]),
        }
        lines.append(json.dumps(record, sort_keys=True))
    return "\n".join(lines) + "\n"


def episode_from_jsonl(text: str, seed: int = -1) -> Episode:
    """Rebuild the training-relevant arrays of a serialized episode.

    Evaluation extras are not part of the on-disk format; they are filled with
    neutral values.
    """
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty episode record")
    n = len(rows)
    return Episode(
        scene_id=int(rows[0]["scene_id"]), seed=seed,
        rtg=np.array([r["rtg"] for r in rows]),
        states=np.array([r["state"] for r in rows]),
        actions=np.array([r["decision"] for r in rows]),
        rewards=np.array([r["reward"] for r in rows]),
        qoe_sums=np.zeros(n), power_ok=np.ones(n, dtype=bool),
        latency_violations=np.zeros(n, dtype=bool),
    )
