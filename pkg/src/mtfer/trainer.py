"""Optimization loop: Adam updates, plateau/early-stop callbacks, per-epoch
metric tracking, best-weight restoration and evaluation.

Both callbacks monitor validation emotion accuracy. Each epoch runs the
plateau check first, then early stopping, so a learning-rate reduction and a
stop can never race. The learning rate after k reductions is computed in
closed form as initial_lr * factor**k, so every value in the lr sequence is
exactly initial_lr times a power of the factor. Weight snapshots are taken
whenever the monitor strictly exceeds the best value seen so far (ties keep
the earliest epoch); the min_delta thresholds only drive the patience
counters.

Training is sequential and fully driven by the config seed: two runs with
the same seed, config and data produce bit-identical parameter trajectories
and metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Batch, DatasetSplit, batches
from .errors import ConfigError, DimensionError, SizeError
from .heads import HEAD_ORDER
from .losses import LossWeights, batch_cce, weighted_total_loss
from .model import Model
from .tensor import Rng, seeded_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlateauConfig:
    monitor: str = "val_emotion_accuracy"
    patience: int = 5
    factor: float = 0.2
    min_lr: float = 1e-6
    min_delta: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ConfigError(f"plateau.factor must be in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ConfigError(f"plateau.patience must be >= 1, got {self.patience}")


@dataclass(frozen=True)
class EarlyStopConfig:
    monitor: str = "val_emotion_accuracy"
    patience: int = 12
    min_delta: float = 1e-4
    restore_best: bool = True

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError(f"early_stop.patience must be >= 1, got {self.patience}")


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 3e-4
    batch_size: int = 32
    max_epochs: int = 100
    loss_weights: LossWeights = field(default_factory=LossWeights)
    plateau: PlateauConfig = field(default_factory=PlateauConfig)
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    seed: int = 0

    def __post_init__(self):
        if self.initial_lr <= self.plateau.min_lr:
            raise ConfigError(
                f"initial_lr ({self.initial_lr}) must exceed plateau.min_lr ({self.plateau.min_lr})"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS):
    """One Adam update with bias correction, in place over a params dict."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad {name} has shape {g.shape}, param {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# callbacks
# ---------------------------------------------------------------------------

@dataclass
class CallbackState:
    initial_lr: float
    best_metric: float = -math.inf      # early-stop side: max observed monitor
    plateau_best: float = -math.inf     # plateau side keeps its own best
    best_epoch: int = 0
    best_weights: Optional[dict] = None
    plateau_wait: int = 0
    es_wait: int = 0
    n_reductions: int = 0
    current_lr: float = 0.0
    stop_reason: Optional[str] = None   # early_stop | lr_floor | max_epochs
    epoch: int = 0

    def __post_init__(self):
        if self.current_lr == 0.0:
            self.current_lr = self.initial_lr


def reduce_on_plateau(state: CallbackState, value: float, cfg: PlateauConfig) -> CallbackState:
    """Plateau check for one epoch's monitor value.

    patience consecutive non-improving epochs multiply the lr by factor
    (computed as initial_lr * factor**k); a reduced lr below min_lr flags
    stop_reason = "lr_floor".
    """
    improved = value > state.plateau_best + cfg.min_delta
    if value > state.plateau_best:
        state.plateau_best = value
    if improved:
        state.plateau_wait = 0
        return state
    state.plateau_wait += 1
    if state.plateau_wait >= cfg.patience:
        state.n_reductions += 1
        state.current_lr = state.initial_lr * cfg.factor ** state.n_reductions
        state.plateau_wait = 0
        if state.current_lr < cfg.min_lr:
            state.stop_reason = "lr_floor"
    return state


def early_stopping(state: CallbackState, value: float, params: dict,
                   cfg: EarlyStopConfig) -> CallbackState:
    """Early-stop check for one epoch's monitor value.

    Weights are snapshotted whenever value strictly exceeds the best seen so
    far (so the snapshot always matches the maximum recorded monitor value);
    the patience counter only resets on improvements larger than min_delta.
    """
    prev_best = state.best_metric
    if value > prev_best:
        state.best_metric = value
        state.best_epoch = state.epoch
        state.best_weights = {k: np.array(v, copy=True) for k, v in params.items()}
    if value > prev_best + cfg.min_delta:
        state.es_wait = 0
    else:
        state.es_wait += 1
        if state.es_wait >= cfg.patience:
            state.stop_reason = "early_stop"
    return state


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: dict
    train_acc: dict
    val_loss: dict
    val_acc: dict
    train_total: float
    val_total: float


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    stop_reason: Optional[str] = None
    best_epoch: int = 0
    best_metric: float = -math.inf

    def __len__(self):
        return len(self.rows)


def batch_gradients(model: Model, batch: Batch, weights: LossWeights,
                    rng: Optional[Rng] = None, mode: str = "train"):
    """Forward + backward for one batch under the weighted masked loss.

    Returns (grads, head_losses, head_present, outputs). head_losses are the
    per-head mean cross-entropies over mask-present rows (0.0 when none);
    grads carry the w_h-weighted sum of per-head gradients, with masked-out
    rows contributing exactly zero.
    """
    outputs, caches = model.forward(batch.images, mode=mode, rng=rng)
    head_losses, head_present, logit_grads = {}, {}, {}
    for head in HEAD_ORDER:
        probs = outputs[head]
        mask = batch.masks[head]
        n_present = int(mask.sum())
        head_present[head] = n_present
        if n_present == 0:
            head_losses[head] = 0.0
            logit_grads[head] = np.zeros_like(probs)
            continue
        per_row = batch_cce(probs, batch.labels[head])
        head_losses[head] = float(per_row[mask].sum() / n_present)
        scale = np.where(mask, weights[head] / n_present, 0.0)[:, None]
        logit_grads[head] = (probs - batch.labels[head]) * scale
    grads = model.backward(caches, logit_grads)
    return grads, head_losses, head_present, outputs


class _MetricAccumulator:
    """Running per-head loss sums, correct counts and present counts."""

    def __init__(self):
        self.loss_sum = {h: 0.0 for h in HEAD_ORDER}
        self.correct = {h: 0 for h in HEAD_ORDER}
        self.present = {h: 0 for h in HEAD_ORDER}

    def add(self, outputs, batch: Batch):
        for head in HEAD_ORDER:
            mask = batch.masks[head]
            n = int(mask.sum())
            if n == 0:
                continue
            probs = outputs[head]
            per_row = batch_cce(probs, batch.labels[head])
            self.loss_sum[head] += float(per_row[mask].sum())
            pred = np.argmax(probs, axis=1)
            self.correct[head] += int((pred[mask] == batch.class_idx[head][mask]).sum())
            self.present[head] += n

    def losses(self):
        return {h: (self.loss_sum[h] / self.present[h] if self.present[h] else None)
                for h in HEAD_ORDER}

    def accuracies(self):
        return {h: (self.correct[h] / self.present[h] if self.present[h] else None)
                for h in HEAD_ORDER}

    def weighted_total(self, weights: LossWeights) -> float:
        means = {h: (self.loss_sum[h] / self.present[h] if self.present[h] else 0.0)
                 for h in HEAD_ORDER}
        return weighted_total_loss(means, weights)


def evaluate(model: Model, examples, weights: LossWeights = None, batch_size: int = 32):
    """Inference pass over examples; per-head masked mean loss and accuracy.

    Heads with no labeled examples report None for loss and accuracy (shown
    as N/A in tables). Also returns the weighted total of the head means.
    """
    if not examples:
        raise SizeError("evaluate needs a non-empty example list")
    weights = weights if weights is not None else LossWeights()
    acc = _MetricAccumulator()
    for batch in batches(examples, batch_size=batch_size, shuffle=False):
        outputs, _ = model.forward(batch.images, mode="infer")
        acc.add(outputs, batch)
    return {
        "loss": acc.losses(),
        "accuracy": acc.accuracies(),
        "present": dict(acc.present),
        "weighted_total": acc.weighted_total(weights),
    }


def train(model: Model, data: DatasetSplit, cfg: TrainConfig,
          deterministic: bool = True, log=None):
    """Run the full training loop; returns (model, TrainHistory).

    Per epoch: shuffle, per-batch forward/backward in train mode and an Adam
    update, then a full inference pass over the validation set, then the
    plateau and early-stop callbacks in that order. Terminates on a callback
    stop or after max_epochs; with restore_best the returned model carries
    the weights of the best validation-emotion-accuracy epoch.

    deterministic currently selects the only execution mode there is
    (sequential); it is accepted so callers can pin it explicitly.
    """
    del deterministic  # single-threaded implementation is always deterministic
    if not data.train or not data.validation:
        raise SizeError("train needs non-empty train and validation sets")
    rng = seeded_rng(cfg.seed)
    adam = AdamState()
    state = CallbackState(initial_lr=cfg.initial_lr)
    history = TrainHistory()

    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        lr = state.current_lr
        train_metrics = _MetricAccumulator()
        for batch in batches(data.train, cfg.batch_size, shuffle=True, rng=rng):
            grads, _, _, outputs = batch_gradients(model, batch, cfg.loss_weights,
                                                   rng=rng, mode="train")
            adam_step(model.params, grads, adam, lr)
            train_metrics.add(outputs, batch)

        val = evaluate(model, data.validation, weights=cfg.loss_weights,
                       batch_size=cfg.batch_size)
        record = EpochRecord(
            epoch=epoch,
            lr=lr,
            train_loss=train_metrics.losses(),
            train_acc=train_metrics.accuracies(),
            val_loss=val["loss"],
            val_acc=val["accuracy"],
            train_total=train_metrics.weighted_total(cfg.loss_weights),
            val_total=val["weighted_total"],
        )
        history.rows.append(record)
        monitor = val["accuracy"]["emotion"]
        monitor = 0.0 if monitor is None else monitor
        if log is not None:
            log(f"epoch {epoch}: lr={lr:g} train_total={record.train_total:.4f} "
                f"val_emotion_acc={monitor:.4f}")

        reduce_on_plateau(state, monitor, cfg.plateau)
        early_stopping(state, monitor, model.params, cfg.early_stop)
        if state.stop_reason is not None:
            break

    if state.stop_reason is None:
        state.stop_reason = "max_epochs"
    if cfg.early_stop.restore_best and state.best_weights is not None:
        model.set_params(state.best_weights)
    history.stop_reason = state.stop_reason
    history.best_epoch = state.best_epoch
    history.best_metric = state.best_metric
    return model, history


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------

METRICS_COLUMNS = (
    ["epoch", "lr", "train_loss_total"]
    + [f"train_loss_{h}" for h in HEAD_ORDER]
    + [f"train_acc_{h}" for h in HEAD_ORDER]
    + ["val_loss_total"]
    + [f"val_loss_{h}" for h in HEAD_ORDER]
    + [f"val_acc_{h}" for h in HEAD_ORDER]
)


def _cell(v):
    if v is None:
        return "na"
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def write_metrics_csv(history: TrainHistory, path) -> None:
    """One row per completed epoch, columns as in METRICS_COLUMNS."""
    lines = [",".join(METRICS_COLUMNS)]
    for r in history.rows:
        cells = [str(r.epoch), _cell(r.lr), _cell(r.train_total)]
        cells += [_cell(r.train_loss[h]) for h in HEAD_ORDER]
        cells += [_cell(r.train_acc[h]) for h in HEAD_ORDER]
        cells += [_cell(r.val_total)]
        cells += [_cell(r.val_loss[h]) for h in HEAD_ORDER]
        cells += [_cell(r.val_acc[h]) for h in HEAD_ORDER]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
