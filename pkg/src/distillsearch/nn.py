"""Minimal dense transformer-encoder classifier in numpy.

Parameterized exactly by :class:`~distillsearch.archspace.ArchConfig`:
the scalar weight count always equals ``estimators.param_count`` and an
instrumented forward pass tallies exactly ``estimators.forward_flops``.
Used as both teacher and student at desk scale.

Layout (post-norm BERT-family): token + position embeddings, embedding
layer-norm, then per layer a bidirectional self-attention block and a
GELU feed-forward block, each followed by residual add + layer-norm;
classification from the first token through a tanh pooler and a linear
head. All math is fp64 so finite-difference gradient checks are tight;
checkpoints store fp32.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .archspace import ArchConfig

LN_EPS = 1e-5
INIT_STD = 0.02


class InvalidInputError(ValueError):
    """Token ids out of vocabulary or sequence longer than the model allows."""


class FlopCounter:
    """Tallies 2*m*n*k per matrix product routed through :func:`matmul`."""

    def __init__(self):
        self.flops = 0

    def add_matmul(self, a_shape, b_shape):
        m, k = a_shape[-2], a_shape[-1]
        n = b_shape[-1]
        batch = 1
        for dim in a_shape[:-2]:
            batch *= dim
        self.flops += 2 * batch * m * k * n


def matmul(a: np.ndarray, b: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    if counter is not None:
        a_shape = a.shape if a.ndim >= 2 else (1, a.shape[0])
        counter.add_matmul(a_shape, b.shape)
    return a @ b


def layer_weight_names(i: int) -> list[str]:
    p = f"layer{i}."
    return [
        p + "q_w", p + "q_b", p + "k_w", p + "k_b",
        p + "v_w", p + "v_b", p + "o_w", p + "o_b",
        p + "attn_ln_g", p + "attn_ln_b",
        p + "ffn_up_w", p + "ffn_up_b", p + "ffn_down_w", p + "ffn_down_b",
        p + "ffn_ln_g", p + "ffn_ln_b",
    ]


def weight_names(config: ArchConfig) -> list[str]:
    names = ["tok_emb", "pos_emb", "emb_ln_g", "emb_ln_b"]
    for i in range(config.layers):
        names.extend(layer_weight_names(i))
    names.extend(["pooler_w", "pooler_b", "cls_w", "cls_b"])
    return names


def _weight_shape(name: str, config: ArchConfig) -> tuple[int, ...]:
    h, d = config.hidden, config.ffn
    base = name.split(".")[-1]
    shapes = {
        "tok_emb": (config.vocab, h),
        "pos_emb": (config.max_seq_len, h),
        "emb_ln_g": (h,), "emb_ln_b": (h,),
        "q_w": (h, h), "q_b": (h,), "k_w": (h, h), "k_b": (h,),
        "v_w": (h, h), "v_b": (h,), "o_w": (h, h), "o_b": (h,),
        "attn_ln_g": (h,), "attn_ln_b": (h,),
        "ffn_up_w": (h, d), "ffn_up_b": (d,),
        "ffn_down_w": (d, h), "ffn_down_b": (h,),
        "ffn_ln_g": (h,), "ffn_ln_b": (h,),
        "pooler_w": (h, h), "pooler_b": (h,),
        "cls_w": (h, config.num_classes), "cls_b": (config.num_classes,),
    }
    return shapes[base]


@dataclass
class EncoderModel:
    config: ArchConfig
    weights: dict[str, np.ndarray]

    def num_params(self) -> int:
        return sum(w.size for w in self.weights.values())

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.config, {k: v.copy() for k, v in self.weights.items()})


def init(config: ArchConfig, rng: np.random.Generator | int) -> EncoderModel:
    """Seed-deterministic init: N(0, 0.02) matrices, unit LN scales, zero biases."""
    if config.hidden % config.heads != 0:
        raise ValueError("hidden must be divisible by heads")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    weights = {}
    for name in weight_names(config):
        shape = _weight_shape(name, config)
        base = name.split(".")[-1]
        if base.endswith("_g"):
            weights[name] = np.ones(shape)
        elif base.endswith("_b"):
            weights[name] = np.zeros(shape)
        else:
            weights[name] = rng.normal(0.0, INIT_STD, size=shape)
    return EncoderModel(config, weights)


# ---------------------------------------------------------------------------
# forward / backward


def _layer_norm_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layer_norm_bwd(dy, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def _softmax(x):
    z = x - x.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def _check_inputs(config: ArchConfig, ids: np.ndarray):
    if ids.ndim != 2 or ids.shape[1] < 1:
        raise InvalidInputError(f"expected (batch, seq) ids, got shape {ids.shape}")
    if ids.shape[1] > config.max_seq_len:
        raise InvalidInputError(
            f"sequence length {ids.shape[1]} exceeds max_seq_len {config.max_seq_len}"
        )
    if ids.min() < 0 or ids.max() >= config.vocab:
        bad = ids[(ids < 0) | (ids >= config.vocab)][0]
        raise InvalidInputError(f"token id {int(bad)} outside vocab of size {config.vocab}")


def forward_batch(model: EncoderModel, ids: np.ndarray,
                  counter: FlopCounter | None = None,
                  want_cache: bool = False):
    """Forward a (batch, seq) id array; returns (logits, cache-or-None)."""
    cfg = model.config
    w = model.weights
    ids = np.asarray(ids, dtype=np.int64)
    _check_inputs(cfg, ids)
    B, s = ids.shape
    A, dh = cfg.heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dh)

    emb = w["tok_emb"][ids] + w["pos_emb"][:s]
    x, emb_ln_cache = _layer_norm_fwd(emb, w["emb_ln_g"], w["emb_ln_b"])

    layer_caches = []
    for i in range(cfg.layers):
        p = f"layer{i}."
        q = matmul(x, w[p + "q_w"], counter) + w[p + "q_b"]
        k = matmul(x, w[p + "k_w"], counter) + w[p + "k_b"]
        v = matmul(x, w[p + "v_w"], counter) + w[p + "v_b"]
        qh = q.reshape(B, s, A, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(B, s, A, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(B, s, A, dh).transpose(0, 2, 1, 3)
        scores = matmul(qh, kh.transpose(0, 1, 3, 2), counter) * scale
        probs = _softmax(scores)
        ctx_h = matmul(probs, vh, counter)
        ctx = ctx_h.transpose(0, 2, 1, 3).reshape(B, s, cfg.hidden)
        attn_out = matmul(ctx, w[p + "o_w"], counter) + w[p + "o_b"]
        x1, ln1_cache = _layer_norm_fwd(x + attn_out, w[p + "attn_ln_g"], w[p + "attn_ln_b"])
        u = matmul(x1, w[p + "ffn_up_w"], counter) + w[p + "ffn_up_b"]
        a = _gelu(u)
        f = matmul(a, w[p + "ffn_down_w"], counter) + w[p + "ffn_down_b"]
        x2, ln2_cache = _layer_norm_fwd(x1 + f, w[p + "ffn_ln_g"], w[p + "ffn_ln_b"])
        if want_cache:
            layer_caches.append(
                dict(x=x, qh=qh, kh=kh, vh=vh, probs=probs, ctx=ctx,
                     ln1=ln1_cache, x1=x1, u=u, a=a, ln2=ln2_cache)
            )
        x = x2

    first = x[:, 0, :]
    pre_pool = matmul(first, w["pooler_w"], counter) + w["pooler_b"]
    pooled = np.tanh(pre_pool)
    logits = matmul(pooled, w["cls_w"], counter) + w["cls_b"]

    cache = None
    if want_cache:
        cache = dict(ids=ids, emb_ln=emb_ln_cache, layers=layer_caches,
                     first=first, pooled=pooled, enc_out=x)
    return logits, cache


def forward(model: EncoderModel, token_ids, counter: FlopCounter | None = None) -> np.ndarray:
    """Logits for a single token-id sequence."""
    ids = np.asarray(token_ids, dtype=np.int64).reshape(1, -1)
    logits, _ = forward_batch(model, ids, counter=counter)
    return logits[0]


def backward(model: EncoderModel, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every weight given d(loss)/d(logits)."""
    cfg = model.config
    w = model.weights
    ids = cache["ids"]
    B, s = ids.shape
    A, dh = cfg.heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dh)
    grads = {name: np.zeros_like(arr) for name, arr in w.items()}

    pooled = cache["pooled"]
    grads["cls_w"] += cache["pooled"].T @ dlogits
    grads["cls_b"] += dlogits.sum(0)
    dpooled = dlogits @ w["cls_w"].T
    dpre_pool = dpooled * (1.0 - pooled * pooled)
    grads["pooler_w"] += cache["first"].T @ dpre_pool
    grads["pooler_b"] += dpre_pool.sum(0)
    dfirst = dpre_pool @ w["pooler_w"].T

    dx = np.zeros_like(cache["enc_out"])
    dx[:, 0, :] = dfirst

    for i in reversed(range(cfg.layers)):
        p = f"layer{i}."
        lc = cache["layers"][i]
        dres2, dg, db = _layer_norm_bwd(dx, lc["ln2"])
        grads[p + "ffn_ln_g"] += dg
        grads[p + "ffn_ln_b"] += db
        df = dres2
        grads[p + "ffn_down_w"] += lc["a"].reshape(-1, cfg.ffn).T @ df.reshape(-1, cfg.hidden)
        grads[p + "ffn_down_b"] += df.sum((0, 1))
        da = df @ w[p + "ffn_down_w"].T
        du = da * _gelu_grad(lc["u"])
        grads[p + "ffn_up_w"] += lc["x1"].reshape(-1, cfg.hidden).T @ du.reshape(-1, cfg.ffn)
        grads[p + "ffn_up_b"] += du.sum((0, 1))
        dx1 = dres2 + du @ w[p + "ffn_up_w"].T

        dres1, dg, db = _layer_norm_bwd(dx1, lc["ln1"])
        grads[p + "attn_ln_g"] += dg
        grads[p + "attn_ln_b"] += db
        dattn_out = dres1
        grads[p + "o_w"] += lc["ctx"].reshape(-1, cfg.hidden).T @ dattn_out.reshape(-1, cfg.hidden)
        grads[p + "o_b"] += dattn_out.sum((0, 1))
        dctx = dattn_out @ w[p + "o_w"].T
        dctx_h = dctx.reshape(B, s, A, dh).transpose(0, 2, 1, 3)
        dprobs = dctx_h @ lc["vh"].transpose(0, 1, 3, 2)
        dvh = lc["probs"].transpose(0, 1, 3, 2) @ dctx_h
        probs = lc["probs"]
        dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))
        dscores *= scale
        dqh = dscores @ lc["kh"]
        dkh = dscores.transpose(0, 1, 3, 2) @ lc["qh"]
        dq = dqh.transpose(0, 2, 1, 3).reshape(B, s, cfg.hidden)
        dk = dkh.transpose(0, 2, 1, 3).reshape(B, s, cfg.hidden)
        dv = dvh.transpose(0, 2, 1, 3).reshape(B, s, cfg.hidden)
        x_in = lc["x"]
        flat = x_in.reshape(-1, cfg.hidden)
        grads[p + "q_w"] += flat.T @ dq.reshape(-1, cfg.hidden)
        grads[p + "q_b"] += dq.sum((0, 1))
        grads[p + "k_w"] += flat.T @ dk.reshape(-1, cfg.hidden)
        grads[p + "k_b"] += dk.sum((0, 1))
        grads[p + "v_w"] += flat.T @ dv.reshape(-1, cfg.hidden)
        grads[p + "v_b"] += dv.sum((0, 1))
        dx = dres1 + dq @ w[p + "q_w"].T + dk @ w[p + "k_w"].T + dv @ w[p + "v_w"].T

    demb, dg, db = _layer_norm_bwd(dx, cache["emb_ln"])
    grads["emb_ln_g"] += dg
    grads["emb_ln_b"] += db
    np.add.at(grads["tok_emb"], ids, demb)
    grads["pos_emb"][:s] += demb.sum(0)
    return grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class TrainState:
    model: EncoderModel
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.adam_m:
            self.adam_m = {k: np.zeros_like(v) for k, v in self.model.weights.items()}
            self.adam_v = {k: np.zeros_like(v) for k, v in self.model.weights.items()}


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def sgd_adam_step(state: TrainState, grads: dict[str, np.ndarray], lr: float) -> TrainState:
    """In-place Adam update; returns the same state with step advanced by 1."""
    t = state.step + 1
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, g in grads.items():
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        state.model.weights[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    state.step = t
    return state


# ---------------------------------------------------------------------------
# checkpoint container: JSON header line + concatenated fp32 LE payloads

_MAGIC = b"ENCKPT1\n"


def save_checkpoint(model: EncoderModel, path) -> None:
    names = weight_names(model.config)
    header = {
        "config": model.config.to_dict(),
        "tensors": [{"name": n, "shape": list(model.weights[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header).encode() + b"\n")
        for n in names:
            fh.write(model.weights[n].astype("<f4").tobytes(order="C"))


def load_checkpoint(path) -> EncoderModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        header = json.loads(fh.readline().decode())
        config = ArchConfig.from_dict(header["config"])
        weights = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise ValueError(f"{path}: truncated tensor {entry['name']}")
            weights[entry["name"]] = (
                np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
            )
    return EncoderModel(config, weights)
