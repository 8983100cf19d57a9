"""Decoder-only transformer in numpy with hand-written reverse-mode gradients.

One backbone serves two heads:

* language model: token + positional embeddings -> blocks -> ln_f -> lm_head
* classifier: z-scored window cut into frames of ``frame_len`` samples per
  channel -> linear projection + positional embeddings -> blocks -> ln_f ->
  mean over positions -> LayerNorm -> Linear -> GELU -> dropout -> Linear(2)

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache, writes parameter gradients into a
``grads`` dict and returns the gradient with respect to its input.
"""

from __future__ import annotations

import io
import struct
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .tokenizer import TokenizerState, normalize

LN_EPS = 1e-5
PROB_EPS = 1e-7
INIT_STD = 0.02


class NumericalError(RuntimeError):
    """Non-finite values encountered during training."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 512
    embed_dim: int = 128
    n_layers: int = 4
    n_heads: int = 4
    block_size: int = 512
    mlp_ratio: int = 4
    dropout_pretrain: float = 0.1
    dropout_finetune: float = 0.2
    frame_len: int = 15

    def __post_init__(self):
        if self.embed_dim % self.n_heads:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.block_size < 1 or self.n_layers < 1 or self.vocab_size < 2:
            raise ValueError("block_size, n_layers >= 1 and vocab_size >= 2 required")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads


# ---------------------------------------------------------------- init

def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, h = cfg.embed_dim, cfg.mlp_ratio * cfg.embed_dim
    p: dict[str, np.ndarray] = {
        "tok_emb": rng.normal(0.0, INIT_STD, (cfg.vocab_size, d)),
        "pos_emb": rng.normal(0.0, INIT_STD, (cfg.block_size, d)),
    }
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}."
        p[pre + "ln1.g"] = np.ones(d)
        p[pre + "ln1.b"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + "attn." + name] = rng.normal(0.0, INIT_STD, (d, d))
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + "attn." + name] = np.zeros(d)
        p[pre + "ln2.g"] = np.ones(d)
        p[pre + "ln2.b"] = np.zeros(d)
        p[pre + "mlp.w1"] = rng.normal(0.0, INIT_STD, (d, h))
        p[pre + "mlp.b1"] = np.zeros(h)
        p[pre + "mlp.w2"] = rng.normal(0.0, INIT_STD, (h, d))
        p[pre + "mlp.b2"] = np.zeros(d)
    p["ln_f.g"] = np.ones(d)
    p["ln_f.b"] = np.zeros(d)
    p["lm_head"] = rng.normal(0.0, INIT_STD, (d, cfg.vocab_size))
    return p


def init_classifier(cfg: ModelConfig, n_channels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d = cfg.embed_dim
    return {
        "proj.w": rng.normal(0.0, INIT_STD, (n_channels * cfg.frame_len, d)),
        "proj.b": np.zeros(d),
        "head.ln.g": np.ones(d),
        "head.ln.b": np.zeros(d),
        "head.w1": rng.normal(0.0, INIT_STD, (d, d)),
        "head.b1": np.zeros(d),
        "head.w2": rng.normal(0.0, INIT_STD, (d, 2)),
        "head.b2": np.zeros(2),
    }


def classifier_channels(cfg: ModelConfig, clf: dict[str, np.ndarray]) -> int:
    return clf["proj.w"].shape[0] // cfg.frame_len


# ---------------------------------------------------------------- elementwise pieces

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu_forward(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def dropout_forward(x, rate: float, rng: Optional[np.random.Generator]):
    if rate <= 0.0 or rng is None:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def layer_norm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layer_norm_backward(dy, cache, grads, prefix):
    xhat, rstd, g = cache
    lead = tuple(range(dy.ndim - 1))
    grads[prefix + ".g"] = grads.get(prefix + ".g", 0.0) + np.sum(dy * xhat, axis=lead)
    grads[prefix + ".b"] = grads.get(prefix + ".b", 0.0) + np.sum(dy, axis=lead)
    dxhat = dy * g
    D = xhat.shape[-1]
    return rstd / D * (D * dxhat - dxhat.sum(-1, keepdims=True)
                       - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True))


def _acc(grads, name, value):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


def linear_backward(dy, x, w, grads, wname, bname=None):
    """Gradient of ``x @ w (+ b)`` over arbitrary leading dims."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    _acc(grads, wname, x2.T @ dy2)
    if bname is not None:
        _acc(grads, bname, dy2.sum(axis=0))
    return dy @ w.T


# ---------------------------------------------------------------- attention / mlp / block

def _causal_mask(T: int) -> np.ndarray:
    return np.triu(np.ones((T, T), dtype=bool), k=1)


def attention_forward(x, p, pre, n_heads, drop=0.0, rng=None):
    """Causal multi-head self-attention on ``x`` of shape (N, T, d)."""
    N, T, d = x.shape
    hd = d // n_heads
    w_qkv = np.concatenate([p[pre + "wq"], p[pre + "wk"], p[pre + "wv"]], axis=1)
    b_qkv = np.concatenate([p[pre + "bq"], p[pre + "bk"], p[pre + "bv"]])
    qkv = x @ w_qkv + b_qkv
    qkv = qkv.reshape(N, T, 3, n_heads, hd).transpose(2, 0, 3, 1, 4)   # (3, N, H, T, hd)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / np.sqrt(hd)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = np.where(_causal_mask(T), -np.inf, scores)
    att = softmax(scores, axis=-1)
    att_d, dmask = dropout_forward(att, drop, rng)
    y = (att_d @ v).transpose(0, 2, 1, 3).reshape(N, T, d)
    out = y @ p[pre + "wo"] + p[pre + "bo"]
    return out, (x, q, k, v, att, att_d, dmask, y, w_qkv, scale, n_heads)


def attention_backward(dout, cache, p, pre, grads):
    x, q, k, v, att, att_d, dmask, y, w_qkv, scale, H = cache
    N, T, d = x.shape
    hd = d // H
    dy = linear_backward(dout, y, p[pre + "wo"], grads, pre + "wo", pre + "bo")
    dy = dy.reshape(N, T, H, hd).transpose(0, 2, 1, 3)
    datt_d = dy @ v.transpose(0, 1, 3, 2)
    dv = att_d.transpose(0, 1, 3, 2) @ dy
    datt = dropout_backward(datt_d, dmask)
    dscores = att * (datt - np.sum(datt * att, axis=-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(N, T, 3 * d)
    x2 = x.reshape(-1, d)
    dw = x2.T @ dqkv.reshape(-1, 3 * d)
    db = dqkv.reshape(-1, 3 * d).sum(axis=0)
    for j, name in enumerate(("q", "k", "v")):
        _acc(grads, pre + "w" + name, dw[:, j * d:(j + 1) * d])
        _acc(grads, pre + "b" + name, db[j * d:(j + 1) * d])
    return dqkv @ w_qkv.T


def mlp_forward(x, p, pre):
    h = x @ p[pre + "w1"] + p[pre + "b1"]
    a, gcache = gelu_forward(h)
    out = a @ p[pre + "w2"] + p[pre + "b2"]
    return out, (x, a, gcache)


def mlp_backward(dout, cache, p, pre, grads):
    x, a, gcache = cache
    da = linear_backward(dout, a, p[pre + "w2"], grads, pre + "w2", pre + "b2")
    dh = gelu_backward(da, gcache)
    return linear_backward(dh, x, p[pre + "w1"], grads, pre + "w1", pre + "b1")


def block_forward(x, p, i, n_heads, drop=0.0, rng=None):
    pre = f"blocks.{i}."
    h1, ln1 = layer_norm_forward(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
    a, attn = attention_forward(h1, p, pre + "attn.", n_heads, drop, rng)
    a, m1 = dropout_forward(a, drop, rng)
    x1 = x + a
    h2, ln2 = layer_norm_forward(x1, p[pre + "ln2.g"], p[pre + "ln2.b"])
    f, mlp = mlp_forward(h2, p, pre + "mlp.")
    f, m2 = dropout_forward(f, drop, rng)
    return x1 + f, (ln1, attn, m1, ln2, mlp, m2)


def block_backward(dx2, cache, p, i, grads):
    pre = f"blocks.{i}."
    ln1, attn, m1, ln2, mlp, m2 = cache
    df = dropout_backward(dx2, m2)
    dh2 = mlp_backward(df, mlp, p, pre + "mlp.", grads)
    dx1 = dx2 + layer_norm_backward(dh2, ln2, grads, pre + "ln2")
    da = dropout_backward(dx1, m1)
    dh1 = attention_backward(da, attn, p, pre + "attn.", grads)
    return dx1 + layer_norm_backward(dh1, ln1, grads, pre + "ln1")


def backbone_forward(x0, p, cfg: ModelConfig, drop=0.0, rng=None):
    """Embedding sum (N, T, d) -> final-normed hidden states (N, T, d)."""
    x, m0 = dropout_forward(x0, drop, rng)
    caches = []
    for i in range(cfg.n_layers):
        x, c = block_forward(x, p, i, cfg.n_heads, drop, rng)
        caches.append(c)
    h, lnf = layer_norm_forward(x, p["ln_f.g"], p["ln_f.b"])
    return h, (m0, caches, lnf)


def backbone_backward(dh, cache, p, cfg: ModelConfig, grads):
    m0, caches, lnf = cache
    dx = layer_norm_backward(dh, lnf, grads, "ln_f")
    for i in reversed(range(cfg.n_layers)):
        dx = block_backward(dx, caches[i], p, i, grads)
    return dropout_backward(dx, m0)


# ---------------------------------------------------------------- language model

def _check_tokens(tokens, cfg: ModelConfig) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.shape[1] > cfg.block_size:
        raise ValueError(f"context length {tokens.shape[1]} exceeds block size {cfg.block_size}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise ValueError("token outside vocabulary")
    return tokens.astype(np.int64)


def lm_forward(tokens, p, cfg: ModelConfig, train_mode=False, rng=None):
    tokens = _check_tokens(tokens, cfg)
    T = tokens.shape[1]
    x0 = p["tok_emb"][tokens] + p["pos_emb"][:T]
    drop = cfg.dropout_pretrain if train_mode else 0.0
    h, bcache = backbone_forward(x0, p, cfg, drop, rng)
    logits = h @ p["lm_head"]
    return logits, (tokens, h, bcache)


def forward_lm(tokens, p, cfg: ModelConfig, train_mode=False, rng=None) -> np.ndarray:
    """Next-token logits, shape (N, T, L) (or (T, L) for a 1-D context)."""
    squeeze = np.asarray(tokens).ndim == 1
    logits, _ = lm_forward(tokens, p, cfg, train_mode, rng)
    return logits[0] if squeeze else logits


def lm_backward(dlogits, cache, p, cfg: ModelConfig, grads=None):
    tokens, h, bcache = cache
    grads = {} if grads is None else grads
    dh = linear_backward(dlogits, h, p["lm_head"], grads, "lm_head")
    dx0 = backbone_backward(dh, bcache, p, cfg, grads)
    T = tokens.shape[1]
    _acc(grads, "pos_emb", np.zeros_like(p["pos_emb"]))
    grads["pos_emb"][:T] += dx0.sum(axis=0)
    demb = np.zeros_like(p["tok_emb"])
    np.add.at(demb, tokens.reshape(-1), dx0.reshape(-1, dx0.shape[-1]))
    _acc(grads, "tok_emb", demb)
    return grads


def loss_pretrain(logits, targets, state: TokenizerState, lam: float = 0.1):
    """Dual objective: mean token CE + ``lam`` * mean squared waveform error.

    The waveform estimate is the dequantized expected level under the
    predicted distribution; the reference is the dequantized target token.
    Returns ``(total, ce, mse, dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {logits.shape} do not match targets {targets.shape}")
    L = logits.shape[-1]
    n = targets.size
    logp = log_softmax(logits)
    prob = np.exp(logp)
    onehot_lp = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    ce = -onehot_lp.mean()

    levels = np.arange(L, dtype=np.float64)
    e_hat = prob @ levels
    gain = 2.0 * state.k * state.sigma / (L - 1)     # d(amplitude)/d(level)
    err = (e_hat - targets) * gain                   # dequantize is affine in the level
    mse = np.mean(err ** 2)

    dlogits = prob.copy()
    np.put_along_axis(dlogits, targets[..., None], np.take_along_axis(prob, targets[..., None], -1) - 1.0, -1)
    dlogits /= n
    de = lam * 2.0 * err * gain / n
    dlogits += de[..., None] * prob * (levels - e_hat[..., None])
    return ce + lam * mse, ce, mse, dlogits


def pretrain_loss_and_grads(contexts, targets, p, cfg: ModelConfig, state: TokenizerState,
                            lam=0.1, train_mode=False, rng=None):
    logits, cache = lm_forward(contexts, p, cfg, train_mode, rng)
    total, ce, mse, dlogits = loss_pretrain(logits, targets, state, lam)
    grads = lm_backward(dlogits, cache, p, cfg)
    return (total, ce, mse), grads


# ---------------------------------------------------------------- classifier

def frame_windows(windows, state: TokenizerState, frame_len: int) -> np.ndarray:
    """(N, C, W) raw windows -> (N, W / F, C * F) z-scored frame vectors."""
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    N, C, W = x.shape
    if W % frame_len:
        raise ValueError(f"window length {W} not divisible by frame_len {frame_len}")
    P = W // frame_len
    z = normalize(x, state).reshape(N, C, P, frame_len)
    return z.transpose(0, 2, 1, 3).reshape(N, P, C * frame_len)


def mean_pool_forward(h):
    return h.mean(axis=1), h.shape


def mean_pool_backward(dpooled, shape):
    return np.broadcast_to(dpooled[:, None, :] / shape[1], shape).copy()


def head_forward(hbar, clf, drop=0.0, rng=None):
    z, ln = layer_norm_forward(hbar, clf["head.ln.g"], clf["head.ln.b"])
    u = z @ clf["head.w1"] + clf["head.b1"]
    a, gc = gelu_forward(u)
    a_d, m = dropout_forward(a, drop, rng)
    logits = a_d @ clf["head.w2"] + clf["head.b2"]
    return logits, (ln, z, gc, a_d, m)


def head_backward(dlogits, cache, clf, grads):
    ln, z, gc, a_d, m = cache
    da = linear_backward(dlogits, a_d, clf["head.w2"], grads, "head.w2", "head.b2")
    du = gelu_backward(dropout_backward(da, m), gc)
    dz = linear_backward(du, z, clf["head.w1"], grads, "head.w1", "head.b1")
    return layer_norm_backward(dz, ln, grads, "head.ln")


def classifier_forward(windows, state, p, clf, cfg: ModelConfig, train_mode=False, rng=None):
    frames = frame_windows(windows, state, cfg.frame_len)
    N, P, _ = frames.shape
    if P > cfg.block_size:
        raise ValueError(f"{P} frames exceed block size {cfg.block_size}")
    x0 = frames @ clf["proj.w"] + clf["proj.b"] + p["pos_emb"][:P]
    drop = cfg.dropout_finetune if train_mode else 0.0
    h, bcache = backbone_forward(x0, p, cfg, drop, rng)
    hbar, pshape = mean_pool_forward(h)
    logits, hcache = head_forward(hbar, clf, drop, rng)
    return logits, (frames, bcache, pshape, hcache, hbar)


def forward_classifier(windows, state, p, clf, cfg: ModelConfig, train_mode=False, rng=None):
    """Class probabilities (N, 2) and pooled embeddings (N, d)."""
    logits, cache = classifier_forward(windows, state, p, clf, cfg, train_mode, rng)
    return softmax(logits), cache[4]


def classifier_backward(dlogits, cache, p, clf, cfg: ModelConfig, backbone=True):
    """Returns ``(backbone_grads, classifier_grads)``.

    Backbone gradients are still propagated when ``backbone`` is False (the
    input projection sits upstream) but are not returned.
    """
    frames, bcache, pshape, hcache, _ = cache
    cg: dict[str, np.ndarray] = {}
    bg: dict[str, np.ndarray] = {}
    dhbar = head_backward(dlogits, hcache, clf, cg)
    dh = mean_pool_backward(dhbar, pshape)
    dx0 = backbone_backward(dh, bcache, p, cfg, bg)
    P = frames.shape[1]
    bg["pos_emb"] = np.zeros_like(p["pos_emb"])
    bg["pos_emb"][:P] = dx0.sum(axis=0)
    linear_backward(dx0, frames, clf["proj.w"], cg, "proj.w", "proj.b")
    if not backbone:
        return {}, cg
    # the token embedding and LM head sit outside the classification path
    bg["tok_emb"] = np.zeros_like(p["tok_emb"])
    bg["lm_head"] = np.zeros_like(p["lm_head"])
    return bg, cg


def class_weights(labels) -> tuple[float, float]:
    """Inverse-frequency weights ``w_c = N / (2 N_c)``."""
    y = np.asarray(labels)
    n1 = int(np.sum(y == 1))
    n0 = int(np.sum(y == 0))
    if n0 == 0 or n1 == 0:
        raise ValueError("both classes must be present to compute class weights")
    return y.size / (2.0 * n0), y.size / (2.0 * n1)


def loss_finetune(p1, y, weights=(1.0, 1.0)) -> float:
    """Batch mean of ``-w1 y log p - w0 (1 - y) log(1 - p)`` with p clamped to [eps, 1-eps]."""
    w0, w1 = weights
    p = np.clip(np.asarray(p1, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-w1 * y * np.log(p) - w0 * (1.0 - y) * np.log(1.0 - p)))


def finetune_loss_from_logits(logits, y, weights=(1.0, 1.0)):
    """Weighted CE on 2-way logits; returns ``(loss, dlogits)``."""
    w0, w1 = weights
    y = np.asarray(y, dtype=np.float64)
    prob = softmax(logits)
    p_raw = prob[:, 1]
    p = np.clip(p_raw, PROB_EPS, 1.0 - PROB_EPS)
    loss = float(np.mean(-w1 * y * np.log(p) - w0 * (1.0 - y) * np.log(1.0 - p)))
    inside = (p_raw >= PROB_EPS) & (p_raw <= 1.0 - PROB_EPS)
    dp = (-w1 * y / p + w0 * (1.0 - y) / (1.0 - p)) * inside / y.size
    dl1 = dp * p_raw * (1.0 - p_raw)
    return loss, np.stack([-dl1, dl1], axis=1)


def finetune_loss_and_grads(windows, y, weights, state, p, clf, cfg, train_mode=False, rng=None,
                            backbone=True):
    logits, cache = classifier_forward(windows, state, p, clf, cfg, train_mode, rng)
    loss, dlogits = finetune_loss_from_logits(logits, y, weights)
    bg, cg = classifier_backward(dlogits, cache, p, clf, cfg, backbone)
    return loss, bg, cg


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"EEGT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    classifier: Optional[dict[str, np.ndarray]] = None
    tokenizer: Optional[TokenizerState] = None


def _config_block(ckpt: Checkpoint) -> bytes:
    lines = [f"model.{k}={v!r}" for k, v in asdict(ckpt.config).items()]
    if ckpt.classifier is not None:
        lines.append(f"classifier.n_channels={classifier_channels(ckpt.config, ckpt.classifier)!r}")
    if ckpt.tokenizer is not None:
        lines += [f"tokenizer.{k}={v!r}" for k, v in asdict(ckpt.tokenizer).items()]
    return ("\n".join(lines) + "\n").encode("ascii")


def save_checkpoint(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    cfg = _config_block(ckpt)
    buf.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(cfg)) + cfg)
    tensors = list(ckpt.params.items())
    if ckpt.classifier is not None:
        tensors += [("classifier." + k, v) for k, v in ckpt.classifier.items()]
    for name, arr in tensors:
        raw = name.encode("ascii")
        arr = np.asarray(arr, dtype="<f8")
        buf.write(struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def _parse_config(text: str):
    model_kw, tok_kw, n_channels = {}, {}, None
    types = {f.name: f.type for f in fields(ModelConfig)}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        group, _, name = key.partition(".")
        try:
            if group == "model" and name in types:
                model_kw[name] = int(value) if types[name] == "int" else float(value)
            elif group == "tokenizer":
                tok_kw[name] = int(value) if name == "L" else float(value)
            elif key == "classifier.n_channels":
                n_channels = int(value)
            else:
                raise CheckpointError(f"unknown config key {key!r}")
        except ValueError:
            raise CheckpointError(f"bad config value for {key!r}: {value!r}") from None
    cfg = ModelConfig(**model_kw)
    tok = TokenizerState(**tok_kw) if tok_kw else None
    return cfg, tok, n_channels


def _expected_shapes(cfg: ModelConfig, n_channels):
    shapes = {k: v.shape for k, v in init_params(cfg, _ShapeRng()).items()}
    if n_channels is not None:
        shapes.update({"classifier." + k: v.shape
                       for k, v in init_classifier(cfg, n_channels, _ShapeRng()).items()})
    return shapes


class _ShapeRng:
    """Stand-in generator: shape bookkeeping without drawing random numbers."""

    def normal(self, loc, scale, size):
        return np.empty(size)


def load_checkpoint(raw: bytes) -> Checkpoint:
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError("bad magic: not an EEGT checkpoint")
    if len(raw) < 12:
        raise CheckpointError("truncated checkpoint header")
    version, cfg_len = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12 + cfg_len
    if len(raw) < pos:
        raise CheckpointError("truncated config block")
    try:
        text = raw[12:pos].decode("ascii")
    except UnicodeDecodeError:
        raise CheckpointError("non-ASCII config block") from None
    cfg, tok, n_channels = _parse_config(text)
    expected = _expected_shapes(cfg, n_channels)

    tensors: dict[str, np.ndarray] = {}
    for want, shape in expected.items():
        try:
            (nlen,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4:pos + 4 + nlen].decode("ascii")
            pos += 4 + nlen
            (rank,) = struct.unpack_from("<I", raw, pos)
            dims = struct.unpack_from(f"<{rank}I", raw, pos + 4)
            pos += 4 + 4 * rank
        except (struct.error, UnicodeDecodeError):
            raise CheckpointError(f"truncated checkpoint: missing tensor {want!r}") from None
        if name != want:
            raise CheckpointError(f"expected tensor {want!r}, found {name!r}")
        if tuple(dims) != tuple(shape):
            raise CheckpointError(f"tensor {name!r} has shape {dims}, config implies {shape}")
        nbytes = 8 * int(np.prod(dims, dtype=np.int64))
        if len(raw) < pos + nbytes:
            raise CheckpointError(f"truncated checkpoint: missing tensor {want!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes after last tensor")

    params = {k: v for k, v in tensors.items() if not k.startswith("classifier.")}
    clf = None
    if n_channels is not None:
        clf = {k[len("classifier."):]: v for k, v in tensors.items() if k.startswith("classifier.")}
    return Checkpoint(cfg, params, clf, tok)


def transfer_for_finetune(ckpt: Checkpoint, n_channels: int, rng: np.random.Generator):
    """Backbone copied from ``ckpt``; classifier freshly initialized."""
    params = {k: v.copy() for k, v in ckpt.params.items()}
    return params, init_classifier(ckpt.config, n_channels, rng)
