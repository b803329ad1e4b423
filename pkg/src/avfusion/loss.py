"""Label-smoothed cross-entropy."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import UsageError
from .tensor import Tensor


def smoothing_targets(targets: np.ndarray, n_classes: int, eps: float) -> np.ndarray:
    """Target distribution: 1-eps on the label, eps/(V-1) on every other class."""
    dist = np.full(targets.shape + (n_classes,), eps / (n_classes - 1))
    np.put_along_axis(dist, targets[..., None], 1.0 - eps, axis=-1)
    return dist


def label_smoothed_ce(logits: Tensor, targets, eps: float = 0.1, valid=None) -> Tensor:
    """Mean over valid positions of -(1-eps) log p(y) - eps/(V-1) sum_{k != y} log p(k)."""
    targets = np.asarray(targets, dtype=np.int64)
    n_classes = logits.shape[-1]
    if n_classes < 2:
        raise UsageError("label smoothing needs at least two classes")
    if not 0.0 <= eps < 1.0:
        raise UsageError(f"label smoothing must satisfy 0 <= eps < 1, got {eps}")
    if targets.shape != logits.shape[:-1]:
        raise UsageError(f"targets {targets.shape} do not match logits {logits.shape}")
    valid = np.ones(targets.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if np.any((targets[valid] < 0) | (targets[valid] >= n_classes)):
        raise UsageError(f"target ids must lie in [0, {n_classes})")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise UsageError("no valid target positions")
    safe = np.where(valid, targets, 0)
    weights = smoothing_targets(safe, n_classes, eps) * (valid[..., None] / n_valid)
    weights = weights.astype(logits.dtype, copy=False)
    return T.neg(T.tsum(T.mul(T.log_softmax(logits, axis=-1), weights)))


def smoothing_floor(n_classes: int, eps: float) -> float:
    """Minimum attainable loss: the entropy of the smoothed target distribution."""
    if eps == 0.0:
        return 0.0
    return -(1.0 - eps) * math.log(1.0 - eps) - eps * math.log(eps / (n_classes - 1))
