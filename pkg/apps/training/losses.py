"""
Training objectives.

Both losses average over every voxel of every image in the batch and clamp
predictions to [eps, 1 - eps] before taking logarithms.
"""

from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from apps.core.exceptions import DimensionError

CLAMP_EPSILON = 1e-7


@dataclass(eq=False)
class LossBatch:
    predictions: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=np.float64)
        targets = np.asarray(self.targets)
        if self.predictions.shape != targets.shape:
            raise DimensionError(
                f"Predictions {self.predictions.shape} and targets {targets.shape} differ", axis="shape"
            )
        if not np.isin(targets, (0, 1)).all():
            raise ValidationError({"targets": "Targets must be exactly binary"})
        self.targets = targets.astype(np.float64)

    @property
    def images(self):
        return self.predictions.shape[0] if self.predictions.ndim else 1

    @property
    def voxels(self):
        return self.predictions.size


def _clamped(predictions):
    clamped = np.clip(predictions, CLAMP_EPSILON, 1.0 - CLAMP_EPSILON)
    inside = (predictions >= CLAMP_EPSILON) & (predictions <= 1.0 - CLAMP_EPSILON)
    return clamped, inside


def bce_loss(batch: LossBatch):
    """Binary cross-entropy and its gradient with respect to the predictions.

    Clamped entries get a zero gradient.
    """
    p, inside = _clamped(batch.predictions)
    y = batch.targets
    count = batch.voxels
    loss = -float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p))) / count
    grad = np.where(inside, (p - y) / (p * (1.0 - p)), 0.0) / count
    return loss, grad


def cross_entropy_loss(probabilities, targets):
    """Softmax cross-entropy for a (N, 2, D, H, W) class distribution.

    ``targets`` is (N, D, H, W) or (N, 1, D, H, W) with values in {0, 1}; the
    class index equals the mask value.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.ndim != 5 or probabilities.shape[1] != 2:
        raise DimensionError(f"Expected (N, 2, D, H, W) probabilities, got {probabilities.shape}", axis="channels")
    targets = np.asarray(targets)
    if targets.ndim == 5:
        targets = targets[:, 0]
    batch = LossBatch(probabilities[:, 1], targets)
    one_hot = np.stack([1.0 - batch.targets, batch.targets], axis=1)
    p, inside = _clamped(probabilities)
    count = batch.voxels
    loss = -float(np.sum(one_hot * np.log(p))) / count
    grad = np.where(inside, -one_hot / p, 0.0) / count
    return loss, grad
