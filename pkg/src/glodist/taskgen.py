"""Synthetic class-incremental benchmark.

Classes are isotropic Gaussian clusters at seeded well-separated centers;
tasks are consecutive chunks of a seeded class permutation. The unlabeled
stream mixes draws from previously-learned class clusters with draws from a
separate family of out-of-distribution clusters placed far from every class
center. Global label g always means "the g-th class in learning order", so
task t covers a contiguous label range.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import LabeledSet
from .errors import InvalidInputError


@dataclass(frozen=True)
class TaskLayout:
    num_classes: int
    task_size: int
    class_order: tuple[int, ...]  # class_order[global_label] = cluster id

    @property
    def num_tasks(self) -> int:
        return self.num_classes // self.task_size

    def task_labels(self, t: int) -> range:
        """Global labels of task t (0-based)."""
        if not 0 <= t < self.num_tasks:
            raise InvalidInputError(f"task index {t} out of range")
        return range(t * self.task_size, (t + 1) * self.task_size)

    def cluster_of(self, global_label: int) -> int:
        return self.class_order[global_label]


def make_layout(num_classes: int, task_size: int, rng: np.random.Generator) -> TaskLayout:
    if num_classes < 2 or task_size < 1:
        raise InvalidInputError("need num_classes >= 2 and task_size >= 1")
    if num_classes % task_size != 0:
        raise InvalidInputError(
            f"task size {task_size} must divide the class count {num_classes}"
        )
    order = tuple(int(c) for c in rng.permutation(num_classes))
    return TaskLayout(num_classes, task_size, order)


@dataclass(frozen=True)
class ClusterGeometry:
    centers: np.ndarray      # (num_classes, dim)
    ood_centers: np.ndarray  # (num_ood_clusters, dim)
    sigma: float


def make_geometry(
    num_classes: int,
    dim: int,
    rng: np.random.Generator,
    *,
    n_ood_clusters: int = 8,
    sigma: float = 1.0,
    min_separation: float = 6.0,
    box_halfwidth: float = 10.0,
    ood_margin: float = 6.0,
) -> ClusterGeometry:
    """Rejection-sample class centers with pairwise distance >= min_separation
    inside a box, then OOD centers in the same box at >= ood_margin * sigma
    from every class center. Same-box placement puts OOD clusters in the
    gaps between class clusters rather than far outside them, so stream
    items drawn from OOD clusters carry information about class boundaries."""
    if dim < 1 or num_classes < 1:
        raise InvalidInputError("need dim >= 1 and num_classes >= 1")
    centers = _place(num_classes, dim, rng, box_halfwidth, min_separation, against=None)
    ood = _place(
        n_ood_clusters, dim, rng, box_halfwidth, min_separation,
        against=(centers, ood_margin * sigma),
    )
    return ClusterGeometry(centers, ood, float(sigma))


def _place(count, dim, rng, halfwidth, min_sep, against):
    placed = []
    tries = 0
    while len(placed) < count:
        tries += 1
        if tries > 100000:
            raise InvalidInputError(
                "could not place separated cluster centers; loosen the geometry"
            )
        c = rng.uniform(-halfwidth, halfwidth, size=dim)
        if placed and np.linalg.norm(np.array(placed) - c, axis=1).min() < min_sep:
            continue
        if against is not None:
            others, margin = against
            if np.linalg.norm(others - c, axis=1).min() < margin:
                continue
        placed.append(c)
    return np.array(placed)


def sample_cluster(geometry: ClusterGeometry, cluster_id: int, n: int, rng) -> np.ndarray:
    center = geometry.centers[cluster_id]
    return center + geometry.sigma * rng.standard_normal((n, len(center)))


def make_task_sequence(
    layout: TaskLayout,
    geometry: ClusterGeometry,
    per_class_train: int,
    per_class_test: int,
    rng: np.random.Generator,
) -> list[tuple[LabeledSet, LabeledSet]]:
    """(train, test) pair per task; test sets are exactly class-balanced."""
    if per_class_train < 1 or per_class_test < 1:
        raise InvalidInputError("per-class counts must be >= 1")
    if len(geometry.centers) < layout.num_classes:
        raise InvalidInputError("geometry does not cover all classes")
    tasks = []
    for t in range(layout.num_tasks):
        xs_tr, ys_tr, xs_te, ys_te = [], [], [], []
        for g in layout.task_labels(t):
            cluster = layout.cluster_of(g)
            xs_tr.append(sample_cluster(geometry, cluster, per_class_train, rng))
            ys_tr.append(np.full(per_class_train, g, dtype=np.int64))
            xs_te.append(sample_cluster(geometry, cluster, per_class_test, rng))
            ys_te.append(np.full(per_class_test, g, dtype=np.int64))
        tasks.append(
            (
                LabeledSet(np.concatenate(xs_tr), np.concatenate(ys_tr)),
                LabeledSet(np.concatenate(xs_te), np.concatenate(ys_te)),
            )
        )
    return tasks


@dataclass(frozen=True)
class StreamSpec:
    prev_like_fraction: float = 0.2

    def __post_init__(self):
        if not 0 <= self.prev_like_fraction <= 1:
            raise InvalidInputError(
                f"prev_like_fraction must be in [0, 1], got {self.prev_like_fraction}"
            )


class MixtureStream:
    """Unbounded unlabeled stream for one stage.

    Each pull is a draw from a uniformly chosen previously-learned class
    cluster with probability prev_like_fraction, otherwise from a uniformly
    chosen OOD cluster. With no previous classes every pull is OOD. Draws
    come from the stream's own rng, so they never coincide bit-for-bit with
    train or test points.
    """

    def __init__(
        self,
        geometry: ClusterGeometry,
        prev_cluster_ids,
        spec: StreamSpec,
        rng: np.random.Generator,
    ):
        if len(geometry.ood_centers) == 0:
            raise InvalidInputError("stream needs at least one OOD cluster")
        self._geometry = geometry
        self._prev = [int(c) for c in prev_cluster_ids]
        self._spec = spec
        self._rng = rng

    def pull(self) -> np.ndarray:
        g = self._geometry
        if self._prev and self._rng.random() < self._spec.prev_like_fraction:
            center = g.centers[self._prev[self._rng.integers(len(self._prev))]]
        else:
            center = g.ood_centers[self._rng.integers(len(g.ood_centers))]
        return center + g.sigma * self._rng.standard_normal(len(center))


def make_stream(
    layout: TaskLayout,
    geometry: ClusterGeometry,
    stage: int,
    spec: StreamSpec,
    rng: np.random.Generator,
) -> MixtureStream:
    """Stream available while learning stage `stage` (1-based): prev-like
    draws cover the clusters of tasks 1..stage-1."""
    if not 1 <= stage <= layout.num_tasks:
        raise InvalidInputError(f"stage {stage} out of range")
    prev = [layout.cluster_of(g) for t in range(stage - 1) for g in layout.task_labels(t)]
    return MixtureStream(geometry, prev, spec, rng)


def export_labeled_csv(dataset: LabeledSet, path) -> None:
    """One row per example: x0..x{d-1},label."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{i}" for i in range(dataset.dim)] + ["label"])
        for x, y in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def load_labeled_csv(path) -> LabeledSet:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[-1] != "label":
            raise InvalidInputError("last column must be 'label'")
        xs, ys = [], []
        for row in reader:
            if not row:
                continue
            xs.append([float(v) for v in row[:-1]])
            ys.append(int(row[-1]))
    return LabeledSet(np.array(xs), np.array(ys, dtype=np.int64))
