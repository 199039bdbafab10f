"""Prompt-guided decision transformer with explicit reverse-mode gradients.

Tokens are (returns-to-go, state, action) triples: an optional prompt segment
of T*+1 tuples from the same scene followed by the most recent trajectory
window.  Each modality has its own linear embedding; prompt tuples index a
prompt positional table, recent tuples index an episode-slot table.  Decoders
are pre-norm blocks (masked multi-head self-attention, then a GELU
feed-forward), with a final layer normalization before the linear decision
head.  Predictions are read at recent state-token positions.

Everything runs in float64 numpy with hand-written backward passes so the
gradients can be checked against central finite differences entry by entry.
"""

import json
from dataclasses import dataclass, field

import numpy as np

LAYERNORM_EPS = 1e-5
FFN_MULT = 4
# tanh-form GELU constants
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = "risdt-checkpoint-v1"


@dataclass
class TrainConfig:
    """Model and optimization hyper-parameters."""

    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 3
    context_len: int = 20       # recent-trajectory window length L
    prompt_len: int = 10        # T*; prompt carries T*+1 tuples
    use_prompt: bool = True     # False = prompt-free ablation
    batch_size: int = 16        # input tokens per scene minibatch
    learning_rate: float = 1e-3
    epochs: int = 60
    seed: int = 0

    @property
    def prompt_tuples(self) -> int:
        return self.prompt_len + 1 if self.use_prompt else 0

    def validate(self) -> None:
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.context_len < 1:
            raise ValueError("context_len must be >= 1")
        for name in ("embed_dim", "num_heads", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class ModelDims:
    state_dim: int
    action_dim: int
    max_horizon: int


def param_names(cfg: TrainConfig, dims: ModelDims) -> list:
    """Canonical parameter order; also the checkpoint blob order."""
    names = [
        "embed.rtg.w", "embed.rtg.b",
        "embed.state.w", "embed.state.b",
        "embed.action.w", "embed.action.b",
        "pos.prompt", "pos.recent",
    ]
    for i in range(cfg.num_layers):
        names += [
            f"layer{i}.ln1.g", f"layer{i}.ln1.b",
            f"layer{i}.attn.wq", f"layer{i}.attn.bq",
            f"layer{i}.attn.wk", f"layer{i}.attn.bk",
            f"layer{i}.attn.wv", f"layer{i}.attn.bv",
            f"layer{i}.attn.wo", f"layer{i}.attn.bo",
            f"layer{i}.ln2.g", f"layer{i}.ln2.b",
            f"layer{i}.ffn.w1", f"layer{i}.ffn.b1",
            f"layer{i}.ffn.w2", f"layer{i}.ffn.b2",
        ]
    names += ["final_ln.g", "final_ln.b", "head.w", "head.b"]
    return names


def _param_shapes(cfg: TrainConfig, dims: ModelDims) -> dict:
    d, f = cfg.embed_dim, FFN_MULT * cfg.embed_dim
    shapes = {
        "embed.rtg.w": (1, d), "embed.rtg.b": (d,),
        "embed.state.w": (dims.state_dim, d), "embed.state.b": (d,),
        "embed.action.w": (dims.action_dim, d), "embed.action.b": (d,),
        "pos.prompt": (cfg.prompt_tuples, d),
        "pos.recent": (dims.max_horizon, d),
    }
    for i in range(cfg.num_layers):
        shapes.update({
            f"layer{i}.ln1.g": (d,), f"layer{i}.ln1.b": (d,),
            f"layer{i}.attn.wq": (d, d), f"layer{i}.attn.bq": (d,),
            f"layer{i}.attn.wk": (d, d), f"layer{i}.attn.bk": (d,),
            f"layer{i}.attn.wv": (d, d), f"layer{i}.attn.bv": (d,),
            f"layer{i}.attn.wo": (d, d), f"layer{i}.attn.bo": (d,),
            f"layer{i}.ln2.g": (d,), f"layer{i}.ln2.b": (d,),
            f"layer{i}.ffn.w1": (d, f), f"layer{i}.ffn.b1": (f,),
            f"layer{i}.ffn.w2": (f, d), f"layer{i}.ffn.b2": (d,),
        })
    shapes.update({"final_ln.g": (d,), "final_ln.b": (d,),
                   "head.w": (d, dims.action_dim), "head.b": (dims.action_dim,)})
    return shapes


@dataclass
class ModelParams:
    """Trainable tensors plus Adam moments and the step counter."""

    params: dict
    adam_m: dict
    adam_v: dict
    step: int
    cfg: TrainConfig
    dims: ModelDims
    seed: int = 0


def init_params(cfg: TrainConfig, dims: ModelDims, seed: int) -> ModelParams:
    """Scaled-uniform init: U(-1/sqrt(fan_in), +1/sqrt(fan_in)) per matrix.

    fan_in is the input dimension for linear maps and the embedding width for
    positional tables; layer-norm scales start at 1, all offsets/biases at 0.
    Draw order follows param_names, so the result is seed-deterministic.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    shapes = _param_shapes(cfg, dims)
    params = {}
    for name in param_names(cfg, dims):
        shape = shapes[name]
        if name.endswith(".b") or name.endswith(".bq") or name.endswith(".bk") \
                or name.endswith(".bv") or name.endswith(".bo") \
                or name.endswith(".b1") or name.endswith(".b2"):
            params[name] = np.zeros(shape)
        elif name.endswith(".g"):
            params[name] = np.ones(shape)
        elif name.startswith("pos."):
            bound = 1.0 / np.sqrt(cfg.embed_dim)
            params[name] = rng.uniform(-bound, bound, shape)
        else:
            bound = 1.0 / np.sqrt(shape[0]) if shape[0] > 0 else 0.0
            params[name] = rng.uniform(-bound, bound, shape)
    zeros = {name: np.zeros_like(arr) for name, arr in params.items()}
    return ModelParams(params=params,
                       adam_m={n: a.copy() for n, a in zeros.items()},
                       adam_v={n: a.copy() for n, a in zeros.items()},
                       step=0, cfg=cfg, dims=dims, seed=seed)


@dataclass
class TokenInputs:
    """One batch of model inputs.

    Recent arrays are (B, L, .) with `valid` marking real tuples (left-padded
    windows carry zeros in the padded slots); `slots` holds 0-based episode
    slot indices.  Prompt arrays are (B, P, .) or None when the model runs
    prompt-free.  With trailing_action=False the final action token is
    omitted (execution mode: the last tuple is the pending decision).
    """

    rtg: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    slots: np.ndarray
    valid: np.ndarray
    prompt_rtg: np.ndarray = None
    prompt_states: np.ndarray = None
    prompt_actions: np.ndarray = None
    trailing_action: bool = True


def _embed_linear(x, w, b):
    return x @ w + b


def embed_tokens(mp: ModelParams, inputs: TokenInputs):
    """Map all modalities to embeddings and interleave (rtg, state, action).

    Returns (tokens (B,T,d), token_valid (B,T), n_prompt_tuples).
    """
    p = mp.params
    cfg = mp.cfg
    batch, n_recent = inputs.rtg.shape[0], inputs.rtg.shape[1]
    has_prompt = cfg.use_prompt and inputs.prompt_rtg is not None
    n_prompt = inputs.prompt_rtg.shape[1] if has_prompt else 0
    if cfg.use_prompt and n_prompt != cfg.prompt_tuples:
        raise ValueError("prompt length does not match the configuration")

    rec_r = _embed_linear(inputs.rtg, p["embed.rtg.w"], p["embed.rtg.b"])
    rec_s = _embed_linear(inputs.states, p["embed.state.w"], p["embed.state.b"])
    rec_a = _embed_linear(inputs.actions, p["embed.action.w"], p["embed.action.b"])
    pos_rec = p["pos.recent"][inputs.slots]           # (B, L, d)
    rec_r = rec_r + pos_rec
    rec_s = rec_s + pos_rec
    rec_a = rec_a + pos_rec

    if has_prompt:
        pr_r = _embed_linear(inputs.prompt_rtg, p["embed.rtg.w"], p["embed.rtg.b"])
        pr_s = _embed_linear(inputs.prompt_states, p["embed.state.w"],
                             p["embed.state.b"])
        pr_a = _embed_linear(inputs.prompt_actions, p["embed.action.w"],
                             p["embed.action.b"])
        pos_pr = p["pos.prompt"][None, :, :]
        pr_r = pr_r + pos_pr
        pr_s = pr_s + pos_pr
        pr_a = pr_a + pos_pr
        all_r = np.concatenate([pr_r, rec_r], axis=1)
        all_s = np.concatenate([pr_s, rec_s], axis=1)
        all_a = np.concatenate([pr_a, rec_a], axis=1)
    else:
        all_r, all_s, all_a = rec_r, rec_s, rec_a

    tokens = np.stack([all_r, all_s, all_a], axis=2)   # (B, P+L, 3, d)
    tokens = tokens.reshape(batch, 3 * (n_prompt + n_recent), cfg.embed_dim)

    tuple_valid = np.concatenate(
        [np.ones((batch, n_prompt), dtype=bool), inputs.valid], axis=1)
    token_valid = np.repeat(tuple_valid, 3, axis=1)
    if not inputs.trailing_action:
        tokens = tokens[:, :-1]
        token_valid = token_valid[:, :-1]
    return tokens, token_valid, n_prompt


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat = xc * inv
    return xhat * g + b, xhat, inv


def _layernorm_bwd(dy, xhat, inv, g):
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean1 - xhat * mean2)
    return dx, dg, db


def _gelu_fwd(x):
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), t


def _gelu_bwd(x, t, dy):
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def _masked_softmax(scores, allowed):
    filled = np.where(allowed, scores, -np.inf)
    row_max = filled.max(axis=-1, keepdims=True)
    # rows with no allowed key produce all-zero attention
    safe_max = np.where(np.isfinite(row_max), row_max, 0.0)
    ex = np.exp(np.where(allowed, filled - safe_max, -np.inf))
    ex = np.where(allowed, ex, 0.0)
    denom = ex.sum(axis=-1, keepdims=True)
    return np.divide(ex, denom, out=np.zeros_like(ex), where=denom > 0)


def _softmax_bwd(probs, dprobs):
    inner = np.sum(probs * dprobs, axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def forward(mp: ModelParams, inputs: TokenInputs, want_cache: bool = False):
    """Run the causal transformer; returns predictions at recent state tokens.

    Output shape is (B, L, action_dim).  With want_cache=True also returns the
    activation tape consumed by backward().
    """
    p = mp.params
    cfg = mp.cfg
    tokens, token_valid, n_prompt = embed_tokens(mp, inputs)
    batch, n_tokens, d = tokens.shape
    heads, dh = cfg.num_heads, d // cfg.num_heads
    scale = 1.0 / np.sqrt(dh)

    causal = np.tril(np.ones((n_tokens, n_tokens), dtype=bool))
    allowed = causal[None, :, :] & token_valid[:, None, :]
    allowed4 = allowed[:, None, :, :]

    x = tokens
    layer_caches = []
    for i in range(cfg.num_layers):
        ln1_out, xhat1, inv1 = _layernorm_fwd(x, p[f"layer{i}.ln1.g"],
                                              p[f"layer{i}.ln1.b"])
        q = ln1_out @ p[f"layer{i}.attn.wq"] + p[f"layer{i}.attn.bq"]
        k = ln1_out @ p[f"layer{i}.attn.wk"] + p[f"layer{i}.attn.bk"]
        v = ln1_out @ p[f"layer{i}.attn.wv"] + p[f"layer{i}.attn.bv"]
        qh = q.reshape(batch, n_tokens, heads, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(batch, n_tokens, heads, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(batch, n_tokens, heads, dh).transpose(0, 2, 1, 3)
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        probs = _masked_softmax(scores, allowed4)
        ctx = (probs @ vh).transpose(0, 2, 1, 3).reshape(batch, n_tokens, d)
        att_out = ctx @ p[f"layer{i}.attn.wo"] + p[f"layer{i}.attn.bo"]
        x1 = x + att_out

        ln2_out, xhat2, inv2 = _layernorm_fwd(x1, p[f"layer{i}.ln2.g"],
                                              p[f"layer{i}.ln2.b"])
        h_pre = ln2_out @ p[f"layer{i}.ffn.w1"] + p[f"layer{i}.ffn.b1"]
        h_act, tanh_cache = _gelu_fwd(h_pre)
        ffn_out = h_act @ p[f"layer{i}.ffn.w2"] + p[f"layer{i}.ffn.b2"]
        x_next = x1 + ffn_out

        if want_cache:
            layer_caches.append(dict(
                x=x, xhat1=xhat1, inv1=inv1, ln1_out=ln1_out,
                qh=qh, kh=kh, vh=vh, probs=probs, ctx=ctx, x1=x1,
                xhat2=xhat2, inv2=inv2, ln2_out=ln2_out,
                h_pre=h_pre, h_act=h_act, tanh_cache=tanh_cache,
            ))
        x = x_next

    final_out, xhat_f, inv_f = _layernorm_fwd(x, p["final_ln.g"], p["final_ln.b"])
    n_recent = inputs.rtg.shape[1]
    state_pos = 3 * n_prompt + 3 * np.arange(n_recent) + 1
    hidden = final_out[:, state_pos, :]
    preds = hidden @ p["head.w"] + p["head.b"]

    if not want_cache:
        return preds
    cache = dict(inputs=inputs, tokens=tokens, token_valid=token_valid,
                 n_prompt=n_prompt, layer_caches=layer_caches,
                 x_last=x, xhat_f=xhat_f, inv_f=inv_f, final_out=final_out,
                 state_pos=state_pos, hidden=hidden)
    return preds, cache


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over all entries of squared differences."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError("prediction/target shape mismatch")
    diff = pred - target
    return float(np.mean(diff * diff))


def masked_mse(pred, target, mask):
    """Mean squared error over valid positions; returns (loss, dloss/dpred)."""
    mask3 = np.asarray(mask, dtype=float)[..., None]
    count = float(np.sum(mask3)) * pred.shape[-1]
    if count == 0:
        raise ValueError("loss mask selects no positions")
    diff = (pred - target) * mask3
    loss = float(np.sum(diff * diff)) / count
    dpred = 2.0 * diff / count
    return loss, dpred


def _linear_bwd(x, w, dy):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def backward(mp: ModelParams, cache: dict, dpreds: np.ndarray) -> dict:
    """Exact gradients of the forward pass for every parameter tensor."""
    p = mp.params
    cfg = mp.cfg
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    inputs = cache["inputs"]
    batch, n_tokens, d = cache["tokens"].shape
    heads, dh = cfg.num_heads, d // cfg.num_heads
    scale = 1.0 / np.sqrt(dh)

    # head
    hidden = cache["hidden"]
    dhidden, dw, db = _linear_bwd(hidden, p["head.w"], dpreds)
    grads["head.w"] += dw
    grads["head.b"] += db
    dfinal = np.zeros_like(cache["final_out"])
    dfinal[:, cache["state_pos"], :] = dhidden

    dx, dg, dbb = _layernorm_bwd(dfinal, cache["xhat_f"], cache["inv_f"],
                                 p["final_ln.g"])
    grads["final_ln.g"] += dg
    grads["final_ln.b"] += dbb

    for i in reversed(range(cfg.num_layers)):
        lc = cache["layer_caches"][i]
        # feed-forward branch
        dffn_out = dx
        dh_act, dw2, db2 = _linear_bwd(lc["h_act"], p[f"layer{i}.ffn.w2"],
                                       dffn_out)
        grads[f"layer{i}.ffn.w2"] += dw2
        grads[f"layer{i}.ffn.b2"] += db2
        dh_pre = _gelu_bwd(lc["h_pre"], lc["tanh_cache"], dh_act)
        dln2_out, dw1, db1 = _linear_bwd(lc["ln2_out"], p[f"layer{i}.ffn.w1"],
                                         dh_pre)
        grads[f"layer{i}.ffn.w1"] += dw1
        grads[f"layer{i}.ffn.b1"] += db1
        dx1_ln, dg2, db2n = _layernorm_bwd(dln2_out, lc["xhat2"], lc["inv2"],
                                           p[f"layer{i}.ln2.g"])
        grads[f"layer{i}.ln2.g"] += dg2
        grads[f"layer{i}.ln2.b"] += db2n
        dx1 = dx + dx1_ln

        # attention branch
        datt_out = dx1
        dctx, dwo, dbo = _linear_bwd(lc["ctx"], p[f"layer{i}.attn.wo"], datt_out)
        grads[f"layer{i}.attn.wo"] += dwo
        grads[f"layer{i}.attn.bo"] += dbo
        dctx_h = dctx.reshape(batch, n_tokens, heads, dh).transpose(0, 2, 1, 3)
        dprobs = dctx_h @ lc["vh"].transpose(0, 1, 3, 2)
        dvh = lc["probs"].transpose(0, 1, 3, 2) @ dctx_h
        dscores = _softmax_bwd(lc["probs"], dprobs) * scale
        dqh = dscores @ lc["kh"]
        dkh = dscores.transpose(0, 1, 3, 2) @ lc["qh"]

        dq = dqh.transpose(0, 2, 1, 3).reshape(batch, n_tokens, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(batch, n_tokens, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(batch, n_tokens, d)
        dln1 = np.zeros_like(lc["ln1_out"])
        for mat, dmat in (("wq", dq), ("wk", dk), ("wv", dv)):
            dpart, dwm, dbm = _linear_bwd(lc["ln1_out"],
                                          p[f"layer{i}.attn.{mat}"], dmat)
            grads[f"layer{i}.attn.{mat}"] += dwm
            grads[f"layer{i}.attn.b{mat[1]}"] += dbm
            dln1 += dpart
        dx_ln, dg1, db1n = _layernorm_bwd(dln1, lc["xhat1"], lc["inv1"],
                                          p[f"layer{i}.ln1.g"])
        grads[f"layer{i}.ln1.g"] += dg1
        grads[f"layer{i}.ln1.b"] += db1n
        dx = dx1 + dx_ln

    # embeddings: re-expand the dropped trailing action token if needed
    dtokens = dx
    n_prompt = cache["n_prompt"]
    n_recent = inputs.rtg.shape[1]
    full = 3 * (n_prompt + n_recent)
    if dtokens.shape[1] != full:
        padded = np.zeros((batch, full, d))
        padded[:, :dtokens.shape[1], :] = dtokens
        dtokens = padded
    dtrip = dtokens.reshape(batch, n_prompt + n_recent, 3, d)
    dall_r, dall_s, dall_a = dtrip[:, :, 0], dtrip[:, :, 1], dtrip[:, :, 2]

    dpr_r, drec_r = dall_r[:, :n_prompt], dall_r[:, n_prompt:]
    dpr_s, drec_s = dall_s[:, :n_prompt], dall_s[:, n_prompt:]
    dpr_a, drec_a = dall_a[:, :n_prompt], dall_a[:, n_prompt:]

    def accum_embed(x_in, dtok, w_name, b_name):
        _, dw_e, db_e = _linear_bwd(x_in, p[w_name], dtok)
        grads[w_name] += dw_e
        grads[b_name] += db_e

    accum_embed(inputs.rtg, drec_r, "embed.rtg.w", "embed.rtg.b")
    accum_embed(inputs.states, drec_s, "embed.state.w", "embed.state.b")
    accum_embed(inputs.actions, drec_a, "embed.action.w", "embed.action.b")
    dpos_rec = drec_r + drec_s + drec_a
    np.add.at(grads["pos.recent"], inputs.slots.reshape(-1),
              dpos_rec.reshape(-1, d))
    if n_prompt:
        accum_embed(inputs.prompt_rtg, dpr_r, "embed.rtg.w", "embed.rtg.b")
        accum_embed(inputs.prompt_states, dpr_s, "embed.state.w",
                    "embed.state.b")
        accum_embed(inputs.prompt_actions, dpr_a, "embed.action.w",
                    "embed.action.b")
        grads["pos.prompt"] += (dpr_r + dpr_s + dpr_a).sum(axis=0)
    return grads


def loss_and_grads(mp: ModelParams, inputs: TokenInputs, targets: np.ndarray,
                   loss_mask: np.ndarray):
    """Masked MSE over recent state-token predictions and its full gradient."""
    preds, cache = forward(mp, inputs, want_cache=True)
    loss, dpreds = masked_mse(preds, targets, loss_mask)
    grads = backward(mp, cache, dpreds)
    return loss, grads, preds


def adam_step(mp: ModelParams, grads: dict, learning_rate: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS) -> ModelParams:
    """Standard bias-corrected Adam update; increments the step counter."""
    mp.step += 1
    correct1 = 1.0 - beta1 ** mp.step
    correct2 = 1.0 - beta2 ** mp.step
    for name, grad in grads.items():
        m = mp.adam_m[name]
        v = mp.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / correct1
        v_hat = v / correct2
        mp.params[name] -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return mp


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then the float64 little-endian blob in
# param_names order.

def save_checkpoint(path, mp: ModelParams, extra: dict = None) -> None:
    names = param_names(mp.cfg, mp.dims)
    header = {
        "magic": CHECKPOINT_MAGIC,
        "seed": mp.seed,
        "step": mp.step,
        "train_config": {k: getattr(mp.cfg, k) for k in (
            "embed_dim", "num_heads", "num_layers", "context_len",
            "prompt_len", "use_prompt", "batch_size", "learning_rate",
            "epochs", "seed")},
        "dims": {"state_dim": mp.dims.state_dim,
                 "action_dim": mp.dims.action_dim,
                 "max_horizon": mp.dims.max_horizon},
        "names": names,
        "shapes": {n: list(mp.params[n].shape) for n in names},
    }
    if extra:
        header.update(extra)
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for name in names:
            fh.write(np.ascontiguousarray(mp.params[name],
                                          dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint")
        cfg = TrainConfig(**header["train_config"])
        dims = ModelDims(**header["dims"])
        params = {}
        for name in header["names"]:
            shape = tuple(header["shapes"][name])
            n_items = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n_items)
            if len(buf) != 8 * n_items:
                raise ValueError("truncated checkpoint blob")
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    zeros = {n: np.zeros_like(a) for n, a in params.items()}
    return ModelParams(params=params, adam_m=zeros,
                       adam_v={n: a.copy() for n, a in zeros.items()},
                       step=int(header["step"]), cfg=cfg, dims=dims,
                       seed=int(header["seed"]))
