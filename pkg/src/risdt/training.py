"""Dataset generation, offline training loop, online execution and baselines.

Behaviour data comes from a best-of-S search policy: each slot, S raw actions
are scored by one-step reward through the exact ZF/water-filling pipeline on
the slot's frozen channel draw and the argmax is kept.  Episodes are split
per scene into a prompt pool and a trajectory pool; minibatches pair a random
contiguous prompt slice with a random recent-trajectory window from the same
scene.  Evaluation runs the trained model closed-loop with returns-to-go
conditioning.
"""

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import env as env_mod
from .config import SceneSpec, SystemConfig, rng_for
from .env import (Episode, Policy, RAW_ACTION_SCALE, action_dim, decode_action,
                  feature_length, rollout, rtg_init, score_decision,
                  state_features)
from .model import (ModelDims, ModelParams, TokenInputs, TrainConfig, adam_step,
                    forward, loss_and_grads)

# Seed-derivation purpose tags (spawn_key prefixes).
TAG_DATA = 1
TAG_EXPERT = 2
TAG_EVAL = 3
TAG_PROMPT = 4
TAG_PROMPT_ROLLOUT = 5
TAG_TRAIN = 6
TAG_ROM = 7

EXPERT_CANDIDATES = 32
PROMPT_POOL_EVERY = 5      # episode index % 5 == 0 joins the prompt pool
ROM_CANDIDATES = 128
ROM_SCORING_EPISODES = 5


class TrainingDivergedError(RuntimeError):
    pass


def derive_seed(master_seed: int, *key) -> int:
    """64-bit child seed from a master seed and an integer key path."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


def model_dims(cfg: SystemConfig, scenes) -> ModelDims:
    return ModelDims(state_dim=feature_length(cfg),
                     action_dim=action_dim(cfg),
                     max_horizon=max(s.horizon for s in scenes))


# ---------------------------------------------------------------------------
# Expert search policy and dataset generation.

def expert_search(state, scene, cfg, n_candidates, rng):
    """Best-of-S one-step search on the current slot's frozen channels.

    Returns (raw, decision, reward); ties break to the lowest candidate index.
    """
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    raws = rng.normal(0.0, RAW_ACTION_SCALE, (n_candidates, action_dim(cfg)))
    best = None
    for idx in range(n_candidates):
        decision = decode_action(raws[idx], cfg)
        score = score_decision(state, decision, scene, cfg)
        if best is None or score.reward > best[2]:
            best = (raws[idx], decision, score.reward)
    return best


def expert_action(state, scene, cfg, n_candidates, rng):
    """Decision of the best-of-S search (argmax one-step reward)."""
    return expert_search(state, scene, cfg, n_candidates, rng)[1]


class ExpertSearchPolicy(Policy):
    def __init__(self, n_candidates: int, rng: np.random.Generator):
        self.n_candidates = n_candidates
        self._rng = rng

    def act(self, state, features):
        scene, cfg = self._scene, self._cfg
        return expert_search(state, scene, cfg, self.n_candidates, self._rng)[0]

    def begin_episode(self, scene, cfg, initial_rtg):
        self._scene = scene
        self._cfg = cfg


class ConstantPolicy(Policy):
    """State-independent policy; the product of the rigid baseline."""

    def __init__(self, raw_action: np.ndarray):
        self.raw_action = np.asarray(raw_action, dtype=float)

    def act(self, state, features):
        return self.raw_action


@dataclass
class SceneData:
    scene_id: int
    episodes: list
    prompt_idx: list
    traj_idx: list

    @property
    def prompt_episodes(self):
        return [self.episodes[i] for i in self.prompt_idx]

    @property
    def traj_episodes(self):
        return [self.episodes[i] for i in self.traj_idx]


@dataclass
class Dataset:
    scenes: dict                # scene_id -> SceneData
    master_seed: int
    search_candidates: int

    def scene_ids(self):
        return sorted(self.scenes)


def generate_dataset(scenes, cfg: SystemConfig, episodes_per_scene: int,
                     n_candidates: int, master_seed: int) -> Dataset:
    """Expert rollouts per scene, split into prompt/trajectory pools."""
    data = {}
    for scene in scenes:
        episodes = []
        for e in range(episodes_per_scene):
            env_seed = derive_seed(master_seed, TAG_DATA, scene.scene_id, e)
            expert_rng = rng_for(master_seed, TAG_EXPERT, scene.scene_id, e)
            policy = ExpertSearchPolicy(n_candidates, expert_rng)
            episodes.append(rollout(policy, scene, cfg, env_seed))
        prompt_idx = [i for i in range(episodes_per_scene)
                      if i % PROMPT_POOL_EVERY == 0]
        traj_idx = [i for i in range(episodes_per_scene)
                    if i % PROMPT_POOL_EVERY != 0]
        data[scene.scene_id] = SceneData(scene.scene_id, episodes,
                                         prompt_idx, traj_idx)
    return Dataset(scenes=data, master_seed=master_seed,
                   search_candidates=n_candidates)


def save_dataset(dataset: Dataset, out_dir, config_hash: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"master_seed": dataset.master_seed,
                "search_candidates": dataset.search_candidates,
                "config_hash": config_hash,
                "scenes": {}}
    for sid in dataset.scene_ids():
        sd = dataset.scenes[sid]
        fname = f"scene_{sid:05d}.jsonl"
        with open(os.path.join(out_dir, fname), "w", encoding="utf-8") as fh:
            for ep in sd.episodes:
                fh.write(env_mod.episode_to_jsonl(ep))
        manifest["scenes"][str(sid)] = {
            "file": fname,
            "episode_seeds": [ep.seed for ep in sd.episodes],
            "prompt_pool": sd.prompt_idx,
            "traj_pool": sd.traj_idx,
        }
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(out_dir) -> Dataset:
    with open(os.path.join(out_dir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    scenes = {}
    for sid_str, entry in manifest["scenes"].items():
        sid = int(sid_str)
        with open(os.path.join(out_dir, entry["file"]), encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        episodes = []
        current = []
        for line in lines:
            record = json.loads(line)
            if record["t"] == 1 and current:
                episodes.append(current)
                current = []
            current.append(line)
        if current:
            episodes.append(current)
        eps = [env_mod.episode_from_jsonl("\n".join(chunk), seed=seed)
               for chunk, seed in zip(episodes, entry["episode_seeds"])]
        scenes[sid] = SceneData(sid, eps, list(entry["prompt_pool"]),
                                list(entry["traj_pool"]))
    return Dataset(scenes=scenes, master_seed=int(manifest["master_seed"]),
                   search_candidates=int(manifest["search_candidates"]))


# ---------------------------------------------------------------------------
# Prompts and batching.

@dataclass
class Prompt:
    """A contiguous slice of a same-scene episode used as in-context guidance."""

    scene_id: int
    rtg: np.ndarray       # (P,)
    states: np.ndarray    # (P, S)
    actions: np.ndarray   # (P, A)
    reward_sum: float     # rewards earned over the slice


def prompt_from_episode(episode: Episode, start: int, n_tuples: int) -> Prompt:
    stop = start + n_tuples
    if stop > len(episode):
        raise ValueError("prompt slice exceeds the episode")
    return Prompt(scene_id=episode.scene_id,
                  rtg=episode.rtg[start:stop].copy(),
                  states=episode.states[start:stop].copy(),
                  actions=episode.actions[start:stop].copy(),
                  reward_sum=float(np.sum(episode.rewards[start:stop])))


def prompt_for_scene(scene: SceneSpec, cfg: SystemConfig, tcfg: TrainConfig,
                     dataset: Dataset, master_seed: int) -> Prompt:
    """Prompt source for online execution.

    Training scenes draw a random slice from the scene's prompt pool; unseen
    scenes get the head of one fresh expert rollout.
    """
    n_tuples = tcfg.prompt_tuples
    if dataset is not None and scene.scene_id in dataset.scenes:
        rng = rng_for(master_seed, TAG_PROMPT, scene.scene_id)
        pool = dataset.scenes[scene.scene_id].prompt_episodes
        ep = pool[int(rng.integers(len(pool)))]
        start = int(rng.integers(len(ep) - n_tuples + 1))
        return prompt_from_episode(ep, start, n_tuples)
    candidates = dataset.search_candidates if dataset is not None \
        else EXPERT_CANDIDATES
    env_seed = derive_seed(master_seed, TAG_PROMPT_ROLLOUT, scene.scene_id)
    expert_rng = rng_for(master_seed, TAG_PROMPT_ROLLOUT, scene.scene_id, 1)
    episode = rollout(ExpertSearchPolicy(candidates, expert_rng), scene, cfg,
                      env_seed)
    return prompt_from_episode(episode, 0, n_tuples)


def sample_minibatch(scene_data: SceneData, scene: SceneSpec,
                     cfg: SystemConfig, tcfg: TrainConfig,
                     rng: np.random.Generator):
    """One per-scene minibatch of G input tokens.

    Each token pairs a random contiguous prompt slice with a random window of
    up to L tuples ending at a random slot; early windows are left-padded and
    masked out of the loss.  Returns (TokenInputs, targets, loss_mask).
    """
    g_tokens, l_win = tcfg.batch_size, tcfg.context_len
    p_tuples = tcfg.prompt_tuples
    s_dim = scene_data.episodes[0].states.shape[1]
    a_dim = scene_data.episodes[0].actions.shape[1]
    norm = rtg_init(scene)

    rtg = np.zeros((g_tokens, l_win, 1))
    states = np.zeros((g_tokens, l_win, s_dim))
    actions = np.zeros((g_tokens, l_win, a_dim))
    slots = np.zeros((g_tokens, l_win), dtype=int)
    valid = np.zeros((g_tokens, l_win), dtype=bool)
    pr_rtg = np.zeros((g_tokens, p_tuples, 1)) if p_tuples else None
    pr_states = np.zeros((g_tokens, p_tuples, s_dim)) if p_tuples else None
    pr_actions = np.zeros((g_tokens, p_tuples, a_dim)) if p_tuples else None

    for g in range(g_tokens):
        if p_tuples:
            pool = scene_data.prompt_episodes
            if not pool:
                raise ValueError("scene prompt pool is empty")
            ep = pool[int(rng.integers(len(pool)))]
            start = int(rng.integers(len(ep) - p_tuples + 1))
            sl = prompt_from_episode(ep, start, p_tuples)
            pr_rtg[g, :, 0] = sl.rtg / norm
            pr_states[g] = sl.states
            pr_actions[g] = sl.actions
        pool = scene_data.traj_episodes
        if not pool:
            raise ValueError("scene trajectory pool is empty")
        ep = pool[int(rng.integers(len(pool)))]
        t_g = int(rng.integers(1, len(ep) + 1))
        lo = max(0, t_g - l_win)
        n_real = t_g - lo
        pad = l_win - n_real
        rtg[g, pad:, 0] = ep.rtg[lo:t_g] / norm
        states[g, pad:] = ep.states[lo:t_g]
        actions[g, pad:] = ep.actions[lo:t_g]
        slots[g, pad:] = np.arange(lo, t_g)
        valid[g, pad:] = True

    inputs = TokenInputs(rtg=rtg, states=states, actions=actions, slots=slots,
                         valid=valid, prompt_rtg=pr_rtg,
                         prompt_states=pr_states, prompt_actions=pr_actions)
    return inputs, actions.copy(), valid.copy()


def train(mp: ModelParams, dataset: Dataset, scenes_by_id: dict,
          cfg: SystemConfig, tcfg: TrainConfig, master_seed: int,
          on_epoch_end=None) -> list:
    """Offline training: one Adam step per per-scene minibatch.

    Returns the loss log as a list of (step, epoch, scene_id, loss); raises
    TrainingDivergedError on a non-finite loss.
    """
    rng = rng_for(master_seed, TAG_TRAIN)
    log = []
    step = 0
    for epoch in range(tcfg.epochs):
        for sid in sorted(dataset.scenes):
            inputs, targets, mask = sample_minibatch(
                dataset.scenes[sid], scenes_by_id[sid], cfg, tcfg, rng)
            loss, grads, _ = loss_and_grads(mp, inputs, targets, mask)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (epoch {epoch}, "
                    f"scene {sid})")
            adam_step(mp, grads, tcfg.learning_rate)
            log.append((step, epoch, sid, loss))
            step += 1
        if on_epoch_end is not None:
            on_epoch_end(epoch, mp)
    return log


# ---------------------------------------------------------------------------
# Online execution.

class SequencePolicy(Policy):
    """Closed-loop execution of a trained model with RTG conditioning.

    The prompt (when the model uses one) is prepended to the growing recent
    trajectory; the conditioning returns-to-go starts at the scene's reward
    budget minus the prompt's realized rewards and decreases by each observed
    reward.
    """

    def __init__(self, mp: ModelParams, prompt: Prompt = None):
        if mp.cfg.use_prompt and prompt is None:
            raise ValueError("this model requires a prompt")
        self.mp = mp
        self.prompt = prompt if mp.cfg.use_prompt else None
        self._history = []

    def begin_episode(self, scene, cfg, initial_rtg):
        self._history = []
        self._norm = rtg_init(scene)
        self._rtg = initial_rtg - (self.prompt.reward_sum if self.prompt
                                   else 0.0)
        self._pending_slot = None

    def act(self, state, features):
        tcfg = self.mp.cfg
        window = self._history[-(tcfg.context_len - 1):] if \
            tcfg.context_len > 1 else []
        tuples = window + [(self._rtg, features, np.zeros(
            self.mp.dims.action_dim), state.slot - 1)]
        n = len(tuples)
        rtg = np.array([[t[0] / self._norm] for t in tuples])[None, :, :]
        states = np.stack([t[1] for t in tuples])[None, :, :]
        actions = np.stack([t[2] for t in tuples])[None, :, :]
        slots = np.array([[t[3] for t in tuples]], dtype=int)
        valid = np.ones((1, n), dtype=bool)
        inputs = TokenInputs(
            rtg=rtg, states=states, actions=actions, slots=slots, valid=valid,
            prompt_rtg=(self.prompt.rtg[None, :, None] / self._norm
                        if self.prompt else None),
            prompt_states=(self.prompt.states[None] if self.prompt else None),
            prompt_actions=(self.prompt.actions[None] if self.prompt else None),
            trailing_action=False)
        preds = forward(self.mp, inputs)
        self._pending_slot = state.slot - 1
        return preds[0, -1]

    def record(self, features, raw_action, reward):
        self._history.append((self._rtg, features, np.asarray(raw_action),
                              self._pending_slot))
        self._rtg -= reward


# ---------------------------------------------------------------------------
# Baselines.

def baseline_rom(dataset: Dataset, scenes_by_id: dict, cfg: SystemConfig,
                 master_seed: int, n_candidates: int = ROM_CANDIDATES,
                 n_episodes: int = ROM_SCORING_EPISODES):
    """Rigid policy: one raw action tuned to a single historical scene.

    Candidates are scored by mean total return when applied open-loop on the
    designated scene, replaying that scene's stored episode seeds.  Returns
    (ConstantPolicy, designated_scene_id).
    """
    rng = rng_for(master_seed, TAG_ROM)
    train_ids = sorted(dataset.scenes)
    sid = train_ids[int(rng.integers(len(train_ids)))]
    scene = scenes_by_id[sid]
    seeds = [ep.seed for ep in dataset.scenes[sid].episodes[:n_episodes]]
    candidates = rng.normal(0.0, RAW_ACTION_SCALE,
                            (n_candidates, action_dim(cfg)))
    best_raw, best_score = None, -np.inf
    for idx in range(n_candidates):
        policy = ConstantPolicy(candidates[idx])
        returns = [rollout(policy, scene, cfg, seed).total_return
                   for seed in seeds]
        score = float(np.mean(returns))
        if score > best_score:
            best_raw, best_score = candidates[idx], score
    return ConstantPolicy(best_raw), sid


# ---------------------------------------------------------------------------
# Evaluation.

@dataclass
class EvalResult:
    scene_id: int
    seeds: list           # env seeds actually used
    total_qoe: np.ndarray     # per seed
    total_return: np.ndarray  # per seed
    violation_rate: np.ndarray
    qoe_trace: np.ndarray     # (T,) mean per-slot QoE sum

    @property
    def mean_total_qoe(self) -> float:
        return float(np.mean(self.total_qoe))

    @property
    def std_total_qoe(self) -> float:
        return float(np.std(self.total_qoe))


def evaluate(make_policy, scene: SceneSpec, cfg: SystemConfig, n_seeds: int,
             master_seed: int) -> EvalResult:
    """Roll `n_seeds` paired episodes; make_policy(scene, idx) builds a fresh
    policy per episode so different policies can share the same env seeds."""
    seeds, tq, tr, vr, traces = [], [], [], [], []
    for idx in range(n_seeds):
        env_seed = derive_seed(master_seed, TAG_EVAL, scene.scene_id, idx)
        episode = rollout(make_policy(scene, idx), scene, cfg, env_seed)
        seeds.append(env_seed)
        tq.append(episode.total_qoe)
        tr.append(episode.total_return)
        vr.append(episode.violation_rate)
        traces.append(episode.qoe_sums)
    return EvalResult(scene_id=scene.scene_id, seeds=seeds,
                      total_qoe=np.array(tq), total_return=np.array(tr),
                      violation_rate=np.array(vr),
                      qoe_trace=np.mean(np.stack(traces), axis=0))


def model_policy_factory(mp: ModelParams, cfg: SystemConfig,
                         dataset: Dataset, master_seed: int):
    """Factory for SequencePolicy instances with per-scene prompt acquisition."""
    cache = {}

    def make(scene, idx):
        if mp.cfg.use_prompt:
            if scene.scene_id not in cache:
                cache[scene.scene_id] = prompt_for_scene(
                    scene, cfg, mp.cfg, dataset, master_seed)
            return SequencePolicy(mp, cache[scene.scene_id])
        return SequencePolicy(mp, None)

    return make
