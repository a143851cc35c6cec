"""Confidence-based selection of an external dataset from an unlabeled stream.

Two buckets: the first ceil(ood_ratio * n_d) pulls are kept verbatim as the
OOD bucket (no scoring). Every later pull, up to the retrieval budget n_max,
is scored by the previous model (temperature-1 max probability and argmax
class) and competes for a slot in its predicted class's bucket. Buckets are
capped at floor(n_prev / num_prev_classes); once full, a candidate replaces
the weakest member only if its score is strictly higher, and among equally
weak members the latest arrival is evicted, so earlier arrivals win ties.
The retrieval counter starts at the OOD bucket size, so total stream pulls
never exceed n_max.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError


@dataclass
class ScoredExample:
    x: np.ndarray
    y_hat: int
    p_hat: float
    arrival: int


@dataclass
class ExternalSet:
    prev_bucket: dict[int, list[ScoredExample]]
    ood_bucket: list[np.ndarray]
    n_prev_target: int
    n_ood_target: int
    per_class_cap: int
    retrieved_count: int
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ood_bucket) + sum(len(v) for v in self.prev_bucket.values())


def _ood_count(ood_ratio: float, n_d: int) -> int:
    # round before ceil so 0.7 * 1200 does not creep past 840
    return int(math.ceil(round(ood_ratio * n_d, 9)))


def sample_external(
    prev_model,
    stream,
    n_d: int,
    n_max: int,
    ood_ratio: float,
    num_prev_classes: int | None = None,
) -> ExternalSet:
    """Build the external set for one stage.

    `prev_model` needs `predict_max(X) -> (classes, probabilities)` and a
    `total_classes` attribute; it may be None only when ood_ratio == 1,
    where the result is exactly the first n_d stream items. `stream.pull()`
    returns a feature vector or None on exhaustion; exhaustion returns a
    truncated set rather than raising.
    """
    if n_d < 1:
        raise InvalidInputError(f"n_d must be >= 1, got {n_d}")
    if n_max < n_d:
        raise InvalidInputError(f"n_max {n_max} must be >= n_d {n_d}")
    if not 0 <= ood_ratio <= 1:
        raise InvalidInputError(f"ood_ratio must be in [0, 1], got {ood_ratio}")
    if ood_ratio < 1 and prev_model is None:
        raise ConfigError("ood_ratio < 1 requires a previous model for scoring")

    n_ood = _ood_count(ood_ratio, n_d)
    n_prev = n_d - n_ood
    if num_prev_classes is None:
        num_prev_classes = prev_model.total_classes if prev_model is not None else 0
    cap = n_prev // num_prev_classes if num_prev_classes > 0 else 0

    ood: list[np.ndarray] = []
    prev: dict[int, list[ScoredExample]] = {}
    pulls = 0
    while pulls < n_ood:
        x = stream.pull()
        if x is None:
            return ExternalSet(prev, ood, n_prev, n_ood, cap, pulls, truncated=True)
        pulls += 1
        ood.append(np.asarray(x, dtype=np.float64))

    truncated = False
    if n_prev > 0 and cap > 0:
        while pulls < n_max:
            x = stream.pull()
            if x is None:
                truncated = True
                break
            arrival = pulls
            pulls += 1
            x = np.asarray(x, dtype=np.float64)
            ys, ps = prev_model.predict_max(x[None, :])
            y_hat, p_hat = int(ys[0]), float(ps[0])
            bucket = prev.setdefault(y_hat, [])
            if len(bucket) < cap:
                bucket.append(ScoredExample(x, y_hat, p_hat, arrival))
            else:
                # weakest member; among equal scores evict the latest arrival
                weakest = min(range(len(bucket)), key=lambda i: (bucket[i].p_hat, -bucket[i].arrival))
                if bucket[weakest].p_hat < p_hat:
                    bucket[weakest] = ScoredExample(x, y_hat, p_hat, arrival)
    return ExternalSet(prev, ood, n_prev, n_ood, cap, pulls, truncated=truncated)


def flatten(ext: ExternalSet) -> list[np.ndarray]:
    """Deterministic order: OOD bucket first, then previous classes ascending
    with members in arrival order."""
    out = list(ext.ood_bucket)
    for c in sorted(ext.prev_bucket):
        for member in sorted(ext.prev_bucket[c], key=lambda m: m.arrival):
            out.append(member.x)
    return out


def flatten_array(ext: ExternalSet, dim: int) -> np.ndarray:
    items = flatten(ext)
    if not items:
        return np.empty((0, dim))
    return np.stack(items)
