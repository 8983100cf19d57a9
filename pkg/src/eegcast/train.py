"""Pretraining and fine-tuning loops, AdamW, and the leakage-aware split."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import net
from .eeg_io import Segment
from .net import Checkpoint, ModelConfig, NumericalError
from .tokenizer import TokenizerState, TokenStream

log = logging.getLogger(__name__)

_EMBEDDINGS = ("tok_emb", "pos_emb")


@dataclass
class TrainRunConfig:
    steps: int = 5000
    batch_size: int = 16
    grad_accum: int = 8
    lr: float = 3e-4
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = 0.1                 # MSE weight, pretraining only
    backbone_frozen: bool = False    # fine-tuning only
    eval_every: int = 100
    val_frac: float = 0.2
    dropout: bool = True

    def __post_init__(self):
        if self.steps < 1 or self.grad_accum < 1 or self.batch_size < 1:
            raise ValueError("steps, grad_accum and batch_size must all be >= 1")


def pretrain_defaults(**kw) -> TrainRunConfig:
    return TrainRunConfig(**{"grad_accum": 8, "lr": 3e-4, **kw})


def finetune_defaults(**kw) -> TrainRunConfig:
    return TrainRunConfig(**{"grad_accum": 4, "lr": 3e-5, **kw})


# ---------------------------------------------------------------- optimizer

def decays(name: str, value: np.ndarray) -> bool:
    """Weight decay only on weight matrices; norms, biases and embeddings are exempt."""
    return value.ndim == 2 and name.split(".")[-1] not in _EMBEDDINGS


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def from_run(cls, run: TrainRunConfig) -> "OptimizerState":
        return cls(run.lr, run.beta1, run.beta2, run.eps, run.weight_decay)


def optimizer_step(params: dict, grads: dict, state: OptimizerState) -> None:
    """AdamW update in place. Parameters without a gradient entry are untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in tensor {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay and decays(name, p):
            p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def _scale_add(acc: Optional[dict], grads: dict, w: float) -> dict:
    if acc is None:
        return {k: g * w for k, g in grads.items()}
    for k, g in grads.items():
        acc[k] += g * w
    return acc


def _rngs(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------- pretraining

@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    curve: list    # (step, ce, mse, total)


def sample_contexts(tokens: np.ndarray, n: int, block: int, rng: np.random.Generator):
    starts = rng.integers(0, len(tokens) - block, size=n)
    idx = starts[:, None] + np.arange(block + 1)
    chunk = tokens[idx].astype(np.int64)
    return chunk[:, :-1], chunk[:, 1:]


def pretrain_gradient(contexts, targets, params, cfg, state, run: TrainRunConfig, rng=None):
    """Average of per-micro-batch gradients over ``grad_accum`` equal slices."""
    acc = None
    losses = np.zeros(3)
    for chunk in np.array_split(np.arange(len(contexts)), run.grad_accum):
        (tot, ce, mse), g = net.pretrain_loss_and_grads(
            contexts[chunk], targets[chunk], params, cfg, state, run.lam,
            train_mode=run.dropout, rng=rng if run.dropout else None)
        acc = _scale_add(acc, g, 1.0 / run.grad_accum)
        losses += np.array([ce, mse, tot]) / run.grad_accum
    return losses, acc


def pretrain(stream: TokenStream, cfg: ModelConfig, run: TrainRunConfig,
             params: Optional[dict] = None,
             callback: Optional[Callable[[int, tuple], None]] = None) -> PretrainResult:
    """Self-supervised next-token training on random context windows."""
    tokens = np.asarray(stream.tokens)
    if len(tokens) < cfg.block_size + 1:
        raise ValueError(f"token stream of length {len(tokens)} shorter than block_size + 1")
    if stream.state.L != cfg.vocab_size:
        raise ValueError(f"tokenizer L={stream.state.L} != model vocab {cfg.vocab_size}")
    init_rng, data_rng, drop_rng = _rngs(run.seed, 3)
    params = net.init_params(cfg, init_rng) if params is None else params
    opt = OptimizerState.from_run(run)
    curve = []
    for step in range(1, run.steps + 1):
        ctx, tgt = sample_contexts(tokens, run.batch_size * run.grad_accum, cfg.block_size, data_rng)
        (ce, mse, total), grads = pretrain_gradient(ctx, tgt, params, cfg, stream.state, run, drop_rng)
        optimizer_step(params, grads, opt)
        curve.append((step, float(ce), float(mse), float(total)))
        if callback is not None:
            callback(step, curve[-1])
        if step % 100 == 0:
            log.info("pretrain step %d ce=%.4f mse=%.4f total=%.4f", step, ce, mse, total)
    return PretrainResult(Checkpoint(cfg, params, None, stream.state), curve)


# ---------------------------------------------------------------- split

@dataclass
class SplitPlan:
    train: np.ndarray
    val: np.ndarray
    purged: np.ndarray      # overlap val windows in time; used by neither split
    stratification: dict


def _overlaps(a0, a1, b0, b1) -> bool:
    return a0 < b1 and b0 < a1


def make_split(segments: list[Segment], val_frac: float = 0.2, seed: int = 0) -> SplitPlan:
    """Stratified, temporally blocked train/validation split.

    Validation is built from contiguous same-label runs of windows; train
    windows that overlap any validation window in time are purged.
    """
    n = len(segments)
    if n < 5:
        raise ValueError(f"need at least 5 segments to stratify, got {n}")
    order = sorted(range(n), key=lambda i: segments[i].t_start)
    labels = np.array([segments[i].label for i in order])
    rng = np.random.default_rng(seed)

    runs: dict[int, list[list[int]]] = {0: [], 1: []}
    i = 0
    while i < n:
        j = i
        while j + 1 < n and labels[j + 1] == labels[i]:
            j += 1
        runs[int(labels[i])].append(list(range(i, j + 1)))
        i = j + 1

    val_pos: list[int] = []
    record = {}
    for cls in (0, 1):
        members = int(np.sum(labels == cls))
        target = int(round(val_frac * members))
        if members >= 2:
            target = min(max(target, 1), members - 1)
        record[cls] = {"total": members, "val_target": target}
        if target == 0:
            continue
        # cut runs into chunks no longer than the class target so it can be met
        chunk = max(1, min(target, 4 if cls == 0 else target))
        pieces = [r[k:k + chunk] for r in runs[cls] for k in range(0, len(r), chunk)]
        picked = 0
        for pi in rng.permutation(len(pieces)):
            piece = pieces[pi]
            if picked + len(piece) <= target:
                val_pos += piece
                picked += len(piece)
            if picked == target:
                break
        record[cls]["val"] = picked

    val = sorted(order[k] for k in val_pos)
    val_set = set(val)
    train, purged = [], []
    for i in order:
        if i in val_set:
            continue
        s = segments[i]
        if any(_overlaps(s.t_start, s.t_end, segments[v].t_start, segments[v].t_end) for v in val):
            purged.append(i)
        else:
            train.append(i)
    return SplitPlan(np.array(train, dtype=np.int64), np.array(val, dtype=np.int64),
                     np.array(purged, dtype=np.int64), record)


# ---------------------------------------------------------------- fine-tuning

def binary_metrics(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    n = tp + fp + fn + tn
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return {"acc": (tp + tn) / n if n else 0.0, "prec": prec, "rec": rec, "f1": f1,
            "tp": tp, "fp": fp, "fn": fn, "tn": tn}


def predict_proba(windows, state, params, clf, cfg, batch: int = 16) -> np.ndarray:
    """Positive-class probability per window, dropout off."""
    out = []
    for lo in range(0, len(windows), batch):
        p, _ = net.forward_classifier(np.stack(windows[lo:lo + batch]), state, params, clf, cfg)
        out.append(p[:, 1])
    return np.concatenate(out) if out else np.empty(0)


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    curve: list              # (step, split, acc, prec, rec, f1)
    loss_curve: list         # (step, loss)
    split: SplitPlan
    weights: tuple
    best_step: int
    train_metrics: dict
    val_metrics: dict


def finetune(segments: list[Segment], pretrained: Checkpoint, run: TrainRunConfig,
             tokenizer: Optional[TokenizerState] = None,
             callback: Optional[Callable[[int, float], None]] = None) -> FinetuneResult:
    """Supervised training of projection + head (and backbone unless frozen).

    Evaluates every ``run.eval_every`` steps and keeps the parameters with the
    best validation F1 (ties: higher accuracy, then earlier step).
    """
    cfg = pretrained.config
    tokenizer = tokenizer or pretrained.tokenizer
    if tokenizer is None:
        raise ValueError("a tokenizer state is needed to z-score fine-tuning windows")
    split = make_split(segments, run.val_frac, run.seed)
    y = np.array([s.label for s in segments], dtype=np.int64)
    train_y = y[split.train]
    if len(np.unique(train_y)) < 2:
        raise ValueError("training split holds a single class")
    weights = net.class_weights(train_y)

    init_rng, data_rng, drop_rng = _rngs(run.seed + 1, 3)
    n_channels = segments[0].window.shape[0]
    params, clf = net.transfer_for_finetune(pretrained, n_channels, init_rng)
    opt = OptimizerState.from_run(run)
    # shared array references: in-place updates land in params / clf
    trainable = {"classifier." + k: v for k, v in clf.items()}
    if not run.backbone_frozen:
        trainable.update(params)
    windows = [s.window for s in segments]

    def evaluate(idx):
        p1 = predict_proba([windows[i] for i in idx], tokenizer, params, clf, cfg)
        return binary_metrics(y[idx], p1 >= 0.5)

    curve, loss_curve = [], []
    best = None
    for step in range(1, run.steps + 1):
        picks = split.train[data_rng.integers(0, len(split.train), size=run.batch_size * run.grad_accum)]
        acc_b = acc_c = None
        loss = 0.0
        for chunk in np.array_split(picks, run.grad_accum):
            l, bg, cg = net.finetune_loss_and_grads(
                np.stack([windows[i] for i in chunk]), y[chunk], weights, tokenizer, params, clf, cfg,
                train_mode=run.dropout, rng=drop_rng if run.dropout else None,
                backbone=not run.backbone_frozen)
            acc_c = _scale_add(acc_c, cg, 1.0 / run.grad_accum)
            if not run.backbone_frozen:
                acc_b = _scale_add(acc_b, bg, 1.0 / run.grad_accum)
            loss += l / run.grad_accum
        grads = {"classifier." + k: g for k, g in acc_c.items()}
        if acc_b is not None:
            grads.update(acc_b)
        optimizer_step(trainable, grads, opt)
        loss_curve.append((step, float(loss)))
        if callback is not None:
            callback(step, loss)

        if step % run.eval_every == 0 or step == run.steps:
            tm, vm = evaluate(split.train), evaluate(split.val)
            for name, m in (("train", tm), ("val", vm)):
                curve.append((step, name, m["acc"], m["prec"], m["rec"], m["f1"]))
            log.info("finetune step %d loss=%.4f train_acc=%.4f val_acc=%.4f val_f1=%.4f",
                     step, loss, tm["acc"], vm["acc"], vm["f1"])
            key = (vm["f1"], vm["acc"])
            if best is None or key > best[0]:
                best = (key, step, {k: v.copy() for k, v in params.items()},
                        {k: v.copy() for k, v in clf.items()}, tm, vm)

    _, best_step, bp, bc, tm, vm = best
    ckpt = Checkpoint(cfg, bp, bc, tokenizer)
    return FinetuneResult(ckpt, curve, loss_curve, split, weights, best_step, tm, vm)


def pretrain_curve_csv(curve) -> str:
    rows = ["step,ce,mse,total"] + [f"{s},{ce!r},{mse!r},{tot!r}" for s, ce, mse, tot in curve]
    return "\n".join(rows) + "\n"


def finetune_curve_csv(curve) -> str:
    rows = ["step,split,acc,prec,rec,f1"]
    rows += [f"{s},{sp},{a:.6f},{p:.6f},{r:.6f},{f:.6f}" for s, sp, a, p, r, f in curve]
    return "\n".join(rows) + "\n"
