"""Loss terms and weighting rules for incremental training.

Every cross-entropy is evaluated from logits through log-sum-exp, never from
materialized probabilities, so saturated predictions stay finite. Each loss
returns (scalar, gradient wrt the logits). Per-example weights multiply the
per-example losses before averaging, and the average always divides by the
batch size rather than the weight sum, which keeps "weight 2" equivalent to
"feed the example twice" up to the change in batch size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, MissingClassError


def _as_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0 or z.shape[1] == 0:
        raise InvalidInputError(f"logits must be a non-empty 2-d array, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    return z


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _weights(per_example_weight, n: int) -> np.ndarray:
    if per_example_weight is None:
        return np.ones(n)
    w = np.asarray(per_example_weight, dtype=np.float64)
    if w.shape != (n,):
        raise InvalidInputError(f"weights must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidInputError("weights must be finite and non-negative")
    return w


def cls_loss(logits, labels, per_example_weight=None) -> tuple[float, np.ndarray]:
    """Weighted mean negative log-likelihood of the given labels."""
    z = _as_logits(logits)
    n, k = z.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise InvalidInputError(f"labels must have shape ({n},), got {y.shape}")
    if np.any(y < 0) or np.any(y >= k):
        raise InvalidInputError(f"labels must lie in [0, {k})")
    w = _weights(per_example_weight, n)
    logp = _log_softmax(z)
    rows = np.arange(n)
    loss = float(-(w * logp[rows, y]).sum() / n)
    dz = _softmax(z)
    dz[rows, y] -= 1.0
    dz *= (w / n)[:, None]
    return loss, dz


def dst_loss(student_logits, teacher_probs, gamma: float, per_example_weight=None) -> tuple[float, np.ndarray]:
    """Cross-entropy from fixed teacher probabilities to the student's
    temperature-smoothed distribution, averaged over the batch.

    The gradient wrt the student logits is (softmax(z / gamma) - teacher)
    * w / (n * gamma); no additional temperature rescaling is applied.
    """
    z = _as_logits(student_logits)
    n, k = z.shape
    if not gamma > 0:
        raise InvalidInputError(f"temperature must be positive, got {gamma}")
    t = np.asarray(teacher_probs, dtype=np.float64)
    if t.shape != z.shape:
        raise InvalidInputError(
            f"teacher class range {t.shape} does not match student logits {z.shape}"
        )
    if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-6):
        raise InvalidInputError("teacher rows must be probability vectors")
    w = _weights(per_example_weight, n)
    zs = z / gamma
    logp = _log_softmax(zs)
    loss = float(-(w * (t * logp).sum(axis=1)).sum() / n)
    dz = (_softmax(zs) - t) * (w / (n * gamma))[:, None]
    return loss, dz


def cnf_loss(logits) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against every class at once; minimized by the
    uniform distribution, where its gradient vanishes."""
    z = _as_logits(logits)
    n, k = z.shape
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + z.max(axis=1)
    loss = float((lse - z.mean(axis=1)).mean())
    dz = (_softmax(z) - 1.0 / k) / n
    return loss, dz


@dataclass(frozen=True)
class DataWeights:
    """Per-class weights proportional to inverse class frequency, normalized
    so a balanced pool gets weight exactly 1 for every class."""

    per_class_weight: dict[int, float]

    def weights_for(self, labels) -> np.ndarray:
        y = np.asarray(labels, dtype=np.int64)
        try:
            return np.array([self.per_class_weight[int(c)] for c in y])
        except KeyError as e:
            raise InvalidInputError(f"no weight defined for class {e.args[0]}") from None


def data_weights(labels, class_range) -> DataWeights:
    """Inverse-frequency weights over `class_range`: w_k = |D| / (|T| * n_k).

    Every class in the range must appear at least once, otherwise its weight
    would be undefined and a MissingClassError is raised.
    """
    y = np.asarray(labels, dtype=np.int64)
    classes = [int(c) for c in class_range]
    if len(classes) == 0 or len(set(classes)) != len(classes):
        raise InvalidInputError("class_range must be non-empty and free of duplicates")
    n = len(y)
    counts = {c: 0 for c in classes}
    for c in y:
        c = int(c)
        if c not in counts:
            raise InvalidInputError(f"label {c} lies outside the class range")
        counts[c] += 1
    missing = [c for c, cnt in counts.items() if cnt == 0]
    if missing:
        raise MissingClassError(f"classes {missing} have no examples in the weighting pool")
    k = len(classes)
    return DataWeights({c: n / (k * counts[c]) for c in classes})


def loss_weight(task_size: int, total_classes: int) -> float:
    """Scale for a loss term that trains `task_size` of `total_classes` classes."""
    if not 1 <= task_size <= total_classes:
        raise InvalidInputError(
            f"task size {task_size} must lie in [1, {total_classes}]"
        )
    return task_size / total_classes
