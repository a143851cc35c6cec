"""Sequence-level evaluation: the per-stage accuracy matrix and the
size-weighted average accuracy / forgetting summaries.

Entries are 1-indexed: A[(r, s)] is the accuracy on task r's test set after
learning stage s (r <= s). Both summaries skip the first stage and weight
task r by its share of the classes seen at stage s.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledSet
from .errors import InvalidInputError


@dataclass
class AccuracyMatrix:
    task_sizes: list[int]
    entries: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def num_stages(self) -> int:
        return len(self.task_sizes)

    def a(self, r: int, s: int) -> float:
        if not 1 <= r <= s <= self.num_stages:
            raise InvalidInputError(f"need 1 <= r <= s <= {self.num_stages}, got ({r}, {s})")
        try:
            return self.entries[(r, s)]
        except KeyError:
            raise InvalidInputError(f"accuracy entry ({r}, {s}) was never recorded") from None

    def set(self, r: int, s: int, value: float) -> None:
        if not 1 <= r <= s <= self.num_stages:
            raise InvalidInputError(f"need 1 <= r <= s <= {self.num_stages}, got ({r}, {s})")
        if not 0 <= value <= 1:
            raise InvalidInputError(f"accuracy must lie in [0, 1], got {value}")
        self.entries[(r, s)] = float(value)


def task_accuracy(model, test_set: LabeledSet) -> float:
    """Fraction of test points whose argmax over every head so far matches the
    label. Requires a class-balanced test set so matrix entries are comparable."""
    if len(test_set) == 0:
        raise InvalidInputError("test set is empty")
    counts = set(test_set.class_counts().values())
    if len(counts) != 1:
        raise InvalidInputError("test set must contain the same number of points per class")
    pred = model.predict(test_set.X)
    return float((pred == test_set.y).mean())


def _cumulative(task_sizes: list[int]) -> list[int]:
    out, tot = [], 0
    for n in task_sizes:
        tot += n
        out.append(tot)
    return out


def acc(matrix: AccuracyMatrix) -> float:
    """Average over stages 2..t of the size-weighted accuracy across every
    task seen at that stage."""
    t = matrix.num_stages
    if t < 2:
        raise InvalidInputError("accuracy summary needs at least two stages")
    cum = _cumulative(matrix.task_sizes)
    total = 0.0
    for s in range(2, t + 1):
        for r in range(1, s + 1):
            total += matrix.task_sizes[r - 1] / cum[s - 1] * matrix.a(r, s)
    return total / (t - 1)


def fgt(matrix: AccuracyMatrix) -> float:
    """Average over stages 2..t of the size-weighted drop from each earlier
    task's just-learned accuracy to its accuracy at the current stage."""
    t = matrix.num_stages
    if t < 2:
        raise InvalidInputError("forgetting summary needs at least two stages")
    cum = _cumulative(matrix.task_sizes)
    total = 0.0
    for s in range(2, t + 1):
        for r in range(1, s):
            total += matrix.task_sizes[r - 1] / cum[s - 1] * (matrix.a(r, r) - matrix.a(r, s))
    return total / (t - 1)


def matrix_to_csv(matrix: AccuracyMatrix) -> str:
    """Serialize entries with header r,s,accuracy, sorted by (s, r)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["r", "s", "accuracy"])
    for (r, s) in sorted(matrix.entries, key=lambda k: (k[1], k[0])):
        writer.writerow([r, s, repr(matrix.entries[(r, s)])])
    return buf.getvalue()


def matrix_from_csv(text: str, task_sizes: list[int]) -> AccuracyMatrix:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != ["r", "s", "accuracy"]:
        raise InvalidInputError(f"unexpected accuracy matrix header {header}")
    m = AccuracyMatrix(list(task_sizes))
    for row in reader:
        if not row:
            continue
        m.set(int(row[0]), int(row[1]), float(row[2]))
    return m
