"""Desk-scale training loop: AdamW with decoupled weight decay, linear
warmup into cosine (or linear) decay, label smoothing, mixup, global
gradient clipping, and an EMA shadow of the weights.

One step is sequential: forward -> backward -> clip -> update -> EMA. All
randomness flows from TrainConfig.seed, so a rerun reproduces the metrics
byte for byte. The shipped full-scale hyper-parameter record lives in
configs/imagenet1k_full_scale.json; the defaults here are scaled to CPU
budgets (batch 128, short warmup).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .config import ModelConfig
from .data import Dataset
from .errors import ConfigError, DivergedError, LabelError
from .model import Model, build_model
from .tensor import GradMap, Tensor, backward, log_softmax, tape

TRAIN_SCHEMA = "coatnet-train-config/1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# parameter-name suffixes that receive decoupled weight decay: weight
# matrices and conv kernels only (never norm affines, biases or bias tables)
_DECAYED = {"kernel", "w", "w1", "w2", "wq", "wk", "wv", "wo"}


@dataclass
class TrainConfig:
    peak_lr: float = 1e-3
    min_lr: float = 1e-5
    warmup_steps: int = 100
    decay: str = "cosine"            # cosine | linear | none
    weight_decay: float = 0.05
    clip_norm: float = 1.0
    label_smoothing: float = 0.1
    mixup_alpha: float = 0.8         # 0 disables
    ema_decay: float = 0.9999        # 0 disables
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label smoothing must be in [0, 1)")
        if self.decay not in ("cosine", "linear", "none"):
            raise ConfigError(f"unknown decay schedule {self.decay!r}")
        if self.mixup_alpha < 0:
            raise ConfigError("mixup alpha must be >= 0")


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d.pop("schema", None)
    try:
        return TrainConfig(**d)
    except TypeError as e:
        raise ConfigError(f"malformed train config: {e}") from None


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {"schema": TRAIN_SCHEMA, **asdict(cfg)}


# -- schedule ---------------------------------------------------------------

def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup 0 -> peak over warmup_steps, then decay to min_lr."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    if cfg.decay == "none" or total_steps <= cfg.warmup_steps:
        return cfg.peak_lr
    p = (step - cfg.warmup_steps) / (total_steps - cfg.warmup_steps)
    p = min(max(p, 0.0), 1.0)
    if cfg.decay == "cosine":
        return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * p))
    return cfg.peak_lr - (cfg.peak_lr - cfg.min_lr) * p


# -- losses and batch transforms ---------------------------------------------

def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise LabelError(f"labels out of range for {num_classes} classes")
    out = np.zeros((len(labels), num_classes), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def loss_ce_smooth(logits: Tensor, targets, eps: float = 0.0) -> Tensor:
    """Mean cross-entropy against (1-eps)*target + eps/K; accepts class ids
    or soft label rows (mixup output)."""
    n, k = logits.shape
    if k < 2:
        raise ConfigError("need at least 2 classes")
    t = np.asarray(targets)
    if t.ndim == 1:
        t = one_hot(t, k)
    elif t.shape != (n, k):
        raise LabelError(f"soft targets must be [N, K]={n, k}, got {t.shape}")
    soft = ((1.0 - eps) * t + eps / k).astype(logits.data.dtype)
    logp = log_softmax(logits, axis=-1)
    return -(logp * soft).sum() / n


def mixup(images: np.ndarray, onehot: np.ndarray, alpha: float,
          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    """Convex-combine the batch with a shuffled copy of itself; one
    lambda ~ Beta(alpha, alpha) shared by images and labels."""
    if alpha <= 0:
        return images, onehot, 1.0
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(len(images))
    mixed_x = lam * images + (1.0 - lam) * images[perm]
    mixed_y = lam * onehot + (1.0 - lam) * onehot[perm]
    return mixed_x, mixed_y, lam


# -- optimizer ----------------------------------------------------------------

class AdamWState:
    def __init__(self, params: list[tuple[str, Tensor]]):
        self.m = {n: np.zeros_like(t.data) for n, t in params}
        self.v = {n: np.zeros_like(t.data) for n, t in params}


def decays(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in _DECAYED


def adamw_step(params: list[tuple[str, Tensor]], grads: dict, state: AdamWState,
               step: int, lr: float, cfg: TrainConfig) -> None:
    """One AdamW update (bias-corrected moments, decoupled weight decay
    scaled by lr, applied only to decayed parameter names). `step` is
    1-based."""
    b1c = 1.0 - ADAM_BETA1 ** step
    b2c = 1.0 - ADAM_BETA2 ** step
    for name, p in params:
        g = grads[name].astype(np.float64)
        m = state.m[name] = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        v = state.v[name] = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        update = (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)
        if cfg.weight_decay and decays(name):
            update = update + cfg.weight_decay * p.data
        p.assign(p.data - lr * update)


def clip_gradients(grads: dict, clip_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most clip_norm;
    returns the pre-clip norm."""
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if clip_norm > 0 and total > clip_norm:
        scale = clip_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def ema_update(shadow: dict, params: list[tuple[str, Tensor]], decay: float) -> dict:
    """shadow <- decay*shadow + (1-decay)*params (read-only w.r.t. training)."""
    for name, p in params:
        shadow[name] = decay * shadow[name] + (1.0 - decay) * p.data
    return shadow


# -- the loop -------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    ema: dict
    metrics: list[dict] = field(default_factory=list)

    def metrics_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.metrics)


def _normalizer(data: Dataset):
    mean, std = data.channel_stats()
    return lambda x: (x - mean) / std


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, data: Dataset,
          eval_data: Dataset | None = None, log_every_epoch: bool = True) -> TrainResult:
    """Seeded optimization run; aborts with DivergedError on non-finite loss."""
    if data.resolution != model_cfg.resolution:
        raise ConfigError(
            f"dataset is {data.resolution}px, model expects {model_cfg.resolution}px")
    model = build_model(model_cfg, seed=train_cfg.seed)
    params = model.parameters()
    state = AdamWState(params)
    shadow = ({n: t.data.astype(np.float64).copy() for n, t in params}
              if train_cfg.ema_decay > 0 else {})
    rng = np.random.default_rng(train_cfg.seed)
    normalize = _normalizer(data)
    eval_set = eval_data if eval_data is not None else data

    n = len(data)
    bs = min(train_cfg.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    total_steps = train_cfg.epochs * steps_per_epoch
    metrics: list[dict] = []
    gstep = 0

    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            x = data.images[idx]
            y = one_hot(data.labels[idx], model_cfg.num_classes)
            x, y, _ = mixup(x, y, train_cfg.mixup_alpha, rng)
            x = normalize(x)
            lr = lr_at(gstep, total_steps, train_cfg)
            with tape():
                logits = model.forward(x, training=True,
                                       sd_key=(train_cfg.seed, gstep))
                loss = loss_ce_smooth(logits, y, train_cfg.label_smoothing)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise DivergedError(gstep)
            gmap = backward(loss)
            grads = {name: gmap.get(t) for name, t in params}
            clip_gradients(grads, train_cfg.clip_norm)
            adamw_step(params, grads, state, gstep + 1, lr, train_cfg)
            if train_cfg.ema_decay > 0:
                ema_update(shadow, params, train_cfg.ema_decay)
            losses.append(loss_val)
            gstep += 1
        if log_every_epoch:
            acc, eval_loss = evaluate(model, eval_set, normalize=normalize)
            metrics.append({
                "epoch": epoch, "step": gstep,
                "lr": lr_at(gstep - 1, total_steps, train_cfg),
                "train_loss": float(np.mean(losses)),
                "eval_acc": acc, "eval_loss": eval_loss,
            })
    return TrainResult(model=model, ema=shadow, metrics=metrics)


def evaluate(model: Model, data: Dataset, batch_size: int = 256,
             normalize=None) -> tuple[float, float]:
    """Top-1 accuracy and mean (unsmoothed) cross-entropy, eval mode.

    `normalize` defaults to this split's own channel stats; pass the
    training-split normalizer when evaluating a held-out set.
    """
    if normalize is None:
        normalize = _normalizer(data)
    correct = 0
    losses = []
    for start in range(0, len(data), batch_size):
        x = normalize(data.images[start:start + batch_size])
        y = data.labels[start:start + batch_size]
        logits = model.forward(x, training=False)
        pred = logits.data.argmax(axis=1)
        correct += int((pred == y).sum())
        losses.append(loss_ce_smooth(logits, y, 0.0).item() * len(y))
    return correct / len(data), float(np.sum(losses) / len(data))
