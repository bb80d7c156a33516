"""Mini-batch training: BCE objective, Adam updates, AUC early stopping.

Everything is driven by one integer seed. Parameter initialization and
the per-epoch shuffle are pure functions of (seed, stream, epoch), so
two runs with the same config and data produce bitwise-identical
histories and checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError
from .fusion import ItemEmbeddingTable
from .metrics import auc, logloss
from .model import Batch, ClickModel, Hyperparams
from .ops import SIGMOID_EPS


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 20
    patience: int = 2
    min_auc_gain: float = 1e-4
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate < 0 or self.eps_adam <= 0:
            raise ValidationError("train config: learning_rate >= 0 and eps_adam > 0 required")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("train config: betas must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValidationError("train config: batch_size, max_epochs, patience must be >= 1")
        if self.patience > self.max_epochs:
            raise ValidationError("train config: patience cannot exceed max_epochs")


@dataclass
class AdamState:
    """First/second moment accumulators; shapes mirror the parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: float
    val_logloss: float


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0


def bce_loss(p: float, y: int) -> float:
    """Binary cross-entropy for one prediction, clamped away from {0, 1}."""
    p = min(max(p, SIGMOID_EPS), 1.0 - SIGMOID_EPS)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> None:
    """One Adam update, in place, under the single-writer contract."""
    if set(grads) != set(params):
        raise ValidationError("adam_step: gradient names do not mirror parameter names")
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValidationError(f"adam_step: shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)


def shuffle_indices(n: int, seed: int, epoch: int) -> np.ndarray:
    """Epoch permutation; a pure function of (seed, epoch)."""
    return np.random.default_rng((int(seed), 1, int(epoch))).permutation(n)


def _epoch_pass(model: ClickModel, params, batch: Batch, order, cfg, state) -> float:
    total = 0.0
    n = len(batch)
    for start in range(0, n, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        mini = Batch(batch.target_idx[idx], batch.history_idx[idx], batch.labels[idx])
        loss, grads = model.backward(params, mini)
        adam_step(params, grads, state, cfg)
        total += loss * len(mini)
    return total / n


def train(train_records, val_records, fused_table: ItemEmbeddingTable,
          hyper: Hyperparams, cfg: TrainConfig) -> TrainResult:
    """Train to best validation AUC with early stopping.

    Returns the best-AUC parameter snapshot and the per-epoch history
    (train loss, val AUC, val logloss). The validation set must contain
    both label classes, otherwise AUC is undefined.
    """
    if not train_records or not val_records:
        raise ValidationError("train: train and validation sets must be nonempty")
    val_labels = [r.label for r in val_records]
    if len(set(val_labels)) < 2:
        raise ValidationError("train: validation set has a single label class; AUC undefined")

    model = ClickModel(hyper, fused_table)
    params = model.init_params(cfg.seed)
    state = AdamState.zeros_like(params)
    train_batch = model.encode(train_records)
    val_batch = model.encode(val_records)
    val_y = np.asarray(val_labels, dtype=np.int64)

    best_params = {k: p.copy() for k, p in params.items()}
    best_auc = -np.inf
    best_epoch = 0
    stale = 0
    history: list[EpochStats] = []

    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.shuffle:
            order = shuffle_indices(len(train_batch), cfg.seed, epoch)
        else:
            order = np.arange(len(train_batch))
        train_loss = _epoch_pass(model, params, train_batch, order, cfg, state)

        val_scores = model.predict(params, val_batch)
        val_auc = auc(val_scores, val_y)
        val_ll = logloss(val_scores, val_y)
        history.append(EpochStats(epoch, train_loss, val_auc, val_ll))

        if val_auc >= best_auc + cfg.min_auc_gain:
            stale = 0
        else:
            stale += 1
        if val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            best_params = {k: p.copy() for k, p in params.items()}
        if stale >= cfg.patience:
            break

    return TrainResult(params=best_params, history=history, best_epoch=best_epoch)
