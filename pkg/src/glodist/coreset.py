"""Class-balanced replay memory with uniform random selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledSet
from .errors import InvalidInputError


@dataclass
class Coreset:
    examples: LabeledSet
    capacity: int
    class_range: list[int]

    def __len__(self) -> int:
        return len(self.examples)


def update_coreset(d_trn: LabeledSet, capacity: int, classes, rng: np.random.Generator) -> Coreset:
    """Rebuild the memory from the stage's training pool.

    Each class in `classes` keeps floor(capacity / num_classes) examples,
    drawn uniformly without replacement (fewer if the pool has fewer); any
    remainder of the budget is left unused so classes stay balanced.
    """
    classes = [int(c) for c in classes]
    if capacity < 0:
        raise InvalidInputError(f"capacity must be >= 0, got {capacity}")
    if len(classes) == 0 or len(set(classes)) != len(classes):
        raise InvalidInputError("classes must be non-empty and free of duplicates")
    quota = capacity // len(classes)
    picked = []
    for c in sorted(classes):
        idx = np.flatnonzero(d_trn.y == c)
        take = min(quota, len(idx))
        if take > 0:
            picked.append(rng.choice(idx, size=take, replace=False))
    if picked:
        sel = np.concatenate(picked)
        kept = d_trn.subset(sel)
    else:
        kept = LabeledSet(np.empty((0, d_trn.dim)), np.empty(0, dtype=np.int64))
    return Coreset(kept, capacity, classes)
