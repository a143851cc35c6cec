"""Shared oracles and builders for the test suite.

Everything here is deliberately independent of the code it checks: finite
differences instead of the analytic backward pass, plain loops instead of
vectorized summaries, and an explicit sort instead of the streaming sampler.
"""
from __future__ import annotations

import math

import numpy as np

from glodist.data import LabeledSet
from glodist.losses import cls_loss, cnf_loss, dst_loss
from glodist.nnet import Model


# ---------------------------------------------------------------- gradients

def fd_coordinate_grad(loss_fn, array: np.ndarray, idx, h: float = 1e-5) -> float:
    """Central difference of loss_fn() along one coordinate of a live
    parameter array. Restores the original value."""
    old = array[idx]
    array[idx] = old + h
    up = loss_fn()
    array[idx] = old - h
    down = loss_fn()
    array[idx] = old
    return (up - down) / (2.0 * h)


def rel_err(a: float, b: float, floor: float = 1e-5) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def make_term_loss_fn(model: Model, kind: str, X, head_range, *, labels=None,
                      teacher=None, gamma=1.0, weights=None):
    """Scalar loss of one objective term as a function of the model's live
    parameters (for finite differencing)."""

    def loss_fn() -> float:
        logits = model.forward(X, head_range=head_range)
        if kind == "cls":
            loss, _ = cls_loss(logits, labels, per_example_weight=weights)
        elif kind == "dst":
            loss, _ = dst_loss(logits, teacher, gamma, per_example_weight=weights)
        elif kind == "cnf":
            loss, _ = cnf_loss(logits)
        else:
            raise ValueError(kind)
        return loss

    return loss_fn


def analytic_term_grads(model: Model, kind: str, X, head_range, *, labels=None,
                        teacher=None, gamma=1.0, weights=None):
    logits = model.forward(X, head_range=head_range)
    if kind == "cls":
        _, dlogits = cls_loss(logits, labels, per_example_weight=weights)
    elif kind == "dst":
        _, dlogits = dst_loss(logits, teacher, gamma, per_example_weight=weights)
    elif kind == "cnf":
        _, dlogits = cnf_loss(logits)
    else:
        raise ValueError(kind)
    return model.backward(dlogits)


def check_term_gradients(model: Model, kind: str, X, head_range, rng,
                         *, labels=None, teacher=None, gamma=1.0, weights=None,
                         coords_per_tensor: int = 2, tol: float = 1e-4):
    """Compare analytic parameter gradients of one loss term against central
    differences at randomly chosen coordinates. Returns the number of
    coordinates checked; raises AssertionError on any mismatch."""
    grads = analytic_term_grads(model, kind, X, head_range,
                                labels=labels, teacher=teacher, gamma=gamma, weights=weights)
    loss_fn = make_term_loss_fn(model, kind, X, head_range,
                                labels=labels, teacher=teacher, gamma=gamma, weights=weights)
    params = model.parameters()
    checked = 0
    for path, g in grads.items():
        arr = params[path]
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for _ in range(coords_per_tensor):
            i = int(rng.integers(0, flat.size))
            fd = fd_coordinate_grad(loss_fn, flat, i)
            err = rel_err(gflat[i], fd)
            assert err < tol, (
                f"gradient mismatch at {path}[{i}] for {kind}: "
                f"analytic={gflat[i]!r} fd={fd!r} rel={err:.2e}"
            )
            checked += 1
    return checked


# ------------------------------------------------------------ metric oracle

def brute_force_acc(task_sizes, entries) -> float:
    """Size-weighted average accuracy, written as bare loops."""
    t = len(task_sizes)
    stage_values = []
    for s in range(2, t + 1):
        seen = sum(task_sizes[:s])
        value = 0.0
        for r in range(1, s + 1):
            value += task_sizes[r - 1] / seen * entries[(r, s)]
        stage_values.append(value)
    return sum(stage_values) / len(stage_values)


def brute_force_fgt(task_sizes, entries) -> float:
    t = len(task_sizes)
    stage_values = []
    for s in range(2, t + 1):
        seen = sum(task_sizes[:s])
        value = 0.0
        for r in range(1, s):
            value += task_sizes[r - 1] / seen * (entries[(r, r)] - entries[(r, s)])
        stage_values.append(value)
    return sum(stage_values) / len(stage_values)


def random_matrix_entries(task_sizes, rng):
    entries = {}
    for s in range(1, len(task_sizes) + 1):
        for r in range(1, s + 1):
            entries[(r, s)] = float(rng.uniform(0, 1))
    return entries


# ------------------------------------------------------------ sampler oracle

class TableScorer:
    """predict_max stub. Each stream item carries an integer id in its first
    coordinate; class and confidence come from a lookup table."""

    def __init__(self, table: dict[int, tuple[int, float]], total_classes: int):
        self.table = table
        self.total_classes = total_classes
        self.calls = 0

    def predict_max(self, X):
        self.calls += 1
        X = np.atleast_2d(np.asarray(X))
        ids = X[:, 0].astype(int)
        ys = np.array([self.table[i][0] for i in ids], dtype=np.int64)
        ps = np.array([self.table[i][1] for i in ids], dtype=np.float64)
        return ys, ps


def item(i: int, dim: int = 3) -> np.ndarray:
    """Stream item whose identity survives flattening (id in coordinate 0)."""
    x = np.zeros(dim)
    x[0] = i
    return x


def brute_force_external(table, n_items, n_d, n_max, ood_ratio, num_prev):
    """Sort-based reference for the streaming sampler. Items are the ids
    0..n_items-1 in arrival order. Returns (ood ids, {class: set of ids},
    expected pull count)."""
    n_ood = int(math.ceil(round(ood_ratio * n_d, 9)))
    n_prev = n_d - n_ood
    cap = n_prev // num_prev if num_prev > 0 else 0

    if n_items < n_ood:
        return list(range(n_items)), {}, n_items
    ood_ids = list(range(n_ood))
    if n_prev == 0 or cap == 0:
        return ood_ids, {}, n_ood
    by_class: dict[int, list[tuple[float, int]]] = {}
    for i in range(n_ood, min(n_max, n_items)):
        y, p = table[i]
        by_class.setdefault(y, []).append((p, i))
    kept = {}
    for y, members in by_class.items():
        members.sort(key=lambda m: (-m[0], m[1]))
        kept[y] = {i for _, i in members[:cap]}
    return ood_ids, kept, min(n_max, n_items)


# ------------------------------------------------------------------- data

def blob_set(class_centers, per_class, sigma, rng, labels=None) -> LabeledSet:
    """Gaussian blob per class center; labels default to 0..k-1."""
    xs, ys = [], []
    for k, center in enumerate(class_centers):
        center = np.asarray(center, dtype=np.float64)
        xs.append(center + sigma * rng.standard_normal((per_class, center.size)))
        ys.append(np.full(per_class, labels[k] if labels else k))
    return LabeledSet(np.concatenate(xs), np.concatenate(ys))


def random_model(rng, input_dim=None, hidden=None, head_sizes=None) -> Model:
    input_dim = input_dim or int(rng.integers(2, 6))
    if hidden is None:
        hidden = tuple(int(rng.integers(3, 8)) for _ in range(int(rng.integers(0, 3))))
    m = Model(input_dim, hidden=hidden, rng=int(rng.integers(0, 2**31)))
    for n in head_sizes or [int(rng.integers(2, 5)) for _ in range(int(rng.integers(1, 4)))]:
        m.add_head(n, rng=int(rng.integers(0, 2**31)))
    return m
