"""Labeled dataset container and stream helpers used throughout the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class LabeledSet:
    """Feature matrix plus integer class labels.

    Labels are global class ids: the position of the class in the learning
    order, so task t covers a contiguous label range.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise InvalidInputError(f"X must be 2-d, got shape {self.X.shape}")
        if self.y.ndim != 1 or len(self.y) != len(self.X):
            raise InvalidInputError("labels must be 1-d and match X row count")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def classes(self) -> np.ndarray:
        return np.unique(self.y)

    def class_counts(self) -> dict[int, int]:
        vals, counts = np.unique(self.y, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx)
        return LabeledSet(self.X[idx], self.y[idx])


def concat_labeled(sets: list[LabeledSet]) -> LabeledSet:
    sets = [s for s in sets if len(s) > 0]
    if not sets:
        raise InvalidInputError("cannot concatenate zero non-empty sets")
    if len(sets) == 1:
        return LabeledSet(sets[0].X.copy(), sets[0].y.copy())
    return LabeledSet(
        np.concatenate([s.X for s in sets], axis=0),
        np.concatenate([s.y for s in sets], axis=0),
    )


class ListStream:
    """Pull-based stream over an in-memory sequence; returns None when exhausted."""

    def __init__(self, items):
        self._items = [np.asarray(x, dtype=np.float64) for x in items]
        self._pos = 0

    def pull(self):
        if self._pos >= len(self._items):
            return None
        x = self._items[self._pos]
        self._pos += 1
        return x
