"""Per-head categorical cross-entropy, masked means, the weighted total
loss, and accuracy.

A head's loss over a batch is the mean cross-entropy over the examples that
actually carry that head's label (mask-present), not over the whole batch;
a head with no present examples contributes 0. The total loss is the
weighted sum over heads with default weights emotion 2.0, age 4.0,
race 1.5, gender 0.1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, DimensionError, LabelError
from .heads import HEAD_ORDER

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossWeights:
    emotion: float = 2.0
    age: float = 4.0
    race: float = 1.5
    gender: float = 0.1

    def __post_init__(self):
        vals = [self.emotion, self.age, self.race, self.gender]
        for name, v in zip(("emotion", "age", "race", "gender"), vals):
            if v < 0:
                raise ConfigError(f"loss weight {name} must be >= 0, got {v}")
        if all(v == 0 for v in vals):
            raise ConfigError("loss weights must not all be zero")

    def __getitem__(self, head: str) -> float:
        return getattr(self, head)

    def scaled(self, c: float) -> "LossWeights":
        return LossWeights(self.emotion * c, self.age * c, self.race * c, self.gender * c)

    def as_dict(self) -> dict:
        return {h: getattr(self, h) for h in HEAD_ORDER}


def _check_one_hot(target):
    target = np.asarray(target)
    if not (np.all((target == 0) | (target == 1)) and np.sum(target, axis=-1).min() == 1
            and np.sum(target, axis=-1).max() == 1):
        raise LabelError(f"target is not one-hot: {target}")
    return target


def cce(probs, target) -> float:
    """Categorical cross-entropy -sum(t * log p) for one probability vector.

    probs are clamped to >= 1e-12 before the log so a (near-)zero predicted
    probability yields a large but finite loss.
    """
    probs = np.asarray(probs, dtype=np.float64)
    target = _check_one_hot(target)
    if probs.shape != target.shape:
        raise DimensionError(f"cce shapes differ: probs {probs.shape} vs target {target.shape}")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise LabelError(f"probs must sum to 1 within 1e-6, got sum {probs.sum()}")
    return float(-(target * np.log(np.maximum(probs, LOG_CLAMP))).sum())


def batch_cce(probs, targets) -> np.ndarray:
    """Row-wise cross-entropy for (n, K) probabilities against one-hot rows."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape:
        raise DimensionError(f"batch_cce shapes differ: {probs.shape} vs {targets.shape}")
    return -(targets * np.log(np.maximum(probs, LOG_CLAMP))).sum(axis=-1)


def masked_mean_cce(probs, targets, mask):
    """Mean cross-entropy over mask-present rows; (0.0, 0) when none present."""
    mask = np.asarray(mask, dtype=bool)
    n_present = int(mask.sum())
    if n_present == 0:
        return 0.0, 0
    per_row = batch_cce(probs[mask], np.asarray(targets)[mask])
    return float(per_row.sum() / n_present), n_present


def softmax_cce_logit_grad(probs, targets) -> np.ndarray:
    """Gradient of cce(softmax(z), target) w.r.t. the logits z: probs - target."""
    return np.asarray(probs) - np.asarray(targets)


def weighted_total_loss(head_losses: Mapping[str, float], weights: LossWeights) -> float:
    """Weighted sum of per-head mean losses.

    head_losses must already be per-head means over mask-present examples
    (see masked_mean_cce); absent heads contribute 0 via their zero mean.
    """
    missing = [h for h in HEAD_ORDER if h not in head_losses]
    if missing:
        raise ConfigError(f"head losses missing entries for: {missing}")
    return float(sum(weights[h] * float(head_losses[h]) for h in HEAD_ORDER))


def accuracy(predictions, targets, mask=None) -> float:
    """Fraction of correct predictions over mask-present examples.

    Returns 0.0 (with a warning) when no examples are present.
    """
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise DimensionError(
            f"accuracy length mismatch: {predictions.shape} predictions vs {targets.shape} targets"
        )
    if mask is None:
        mask = np.ones(predictions.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != predictions.shape:
            raise DimensionError(f"accuracy mask shape {mask.shape} != {predictions.shape}")
    n_present = int(mask.sum())
    if n_present == 0:
        warnings.warn("accuracy over an empty mask; reporting 0.0", stacklevel=2)
        return 0.0
    return float((predictions[mask] == targets[mask]).sum() / n_present)
