"""Combine a previous-classes expert and a current-classes expert into one
distribution over all classes without retraining either expert.

The combined distribution keeps the previous expert's top probability p_max
on its argmax class, hands the current classes a computed mass epsilon, and
rescales the remaining previous classes to fill what is left. Rows always
sum to 1 exactly by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class EnsembleOutput:
    probs: np.ndarray
    epsilon: float
    y_max: int
    p_max: float


def epsilon(p_max: float, cur_size: int, total_size: int) -> float:
    """Probability mass granted to the current task's classes.

    epsilon = (1 - p_max) * cur_size / (total_size - 1); since cur_size
    <= total_size - 1 whenever at least one previous class exists, this
    never exceeds 1 - p_max.
    """
    if not 0 < p_max <= 1:
        raise InvalidInputError(f"p_max must be in (0, 1], got {p_max}")
    if cur_size < 1 or total_size <= cur_size:
        raise InvalidInputError(
            f"need 1 <= cur_size < total_size, got cur_size={cur_size} total_size={total_size}"
        )
    return (1.0 - p_max) * cur_size / (total_size - 1)


def _check_probs(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-d probability vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise InvalidInputError(f"{name} must be a probability vector")
    return p


def q_predict(p_prev, p_cur) -> EnsembleOutput:
    """Merge per-example expert outputs into one distribution.

    p_prev ranges over all previously seen classes, p_cur over the current
    task's classes; the output concatenates them in that order. Argmax ties
    in p_prev resolve to the lowest class index. When p_max == 1 the
    non-argmax previous classes receive exactly 0.
    """
    pp = _check_probs(p_prev, "p_prev")
    pc = _check_probs(p_cur, "p_cur")
    y_max = int(pp.argmax())
    p_max = float(pp[y_max])
    eps = epsilon(p_max, len(pc), len(pp) + len(pc))
    if p_max < 1.0:
        scale = (1.0 - p_max - eps) / (1.0 - p_max)
    else:
        scale = 0.0
    out_prev = pp * scale
    out_prev[y_max] = p_max
    out = np.concatenate([out_prev, pc * eps])
    return EnsembleOutput(out, eps, y_max, p_max)


def q_predict_batch(prev_probs, cur_probs) -> np.ndarray:
    """Row-wise q_predict over matrices of expert outputs."""
    pp = np.asarray(prev_probs, dtype=np.float64)
    pc = np.asarray(cur_probs, dtype=np.float64)
    if pp.ndim != 2 or pc.ndim != 2 or len(pp) != len(pc):
        raise InvalidInputError("expert outputs must be 2-d with matching row counts")
    if np.any(pp < 0) or np.any(pc < 0):
        raise InvalidInputError("expert outputs must be non-negative")
    if np.any(np.abs(pp.sum(axis=1) - 1.0) > 1e-6) or np.any(np.abs(pc.sum(axis=1) - 1.0) > 1e-6):
        raise InvalidInputError("expert rows must be probability vectors")
    n = len(pp)
    rows = np.arange(n)
    y_max = pp.argmax(axis=1)
    p_max = pp[rows, y_max]
    eps = (1.0 - p_max) * pc.shape[1] / (pp.shape[1] + pc.shape[1] - 1)
    denom = 1.0 - p_max
    scale = np.where(denom > 0, (denom - eps) / np.where(denom > 0, denom, 1.0), 0.0)
    out_prev = pp * scale[:, None]
    out_prev[rows, y_max] = p_max
    return np.concatenate([out_prev, pc * eps[:, None]], axis=1)
