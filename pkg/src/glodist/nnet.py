"""Dense classifier with a shared trunk and growable per-task output heads.

All parameters are float64 numpy arrays. The trunk applies a softplus
nonlinearity after each dense layer (softplus is smooth, which keeps
finite-difference gradient checks exact to first order); each head is a
linear map on the trunk output and heads concatenate in task order.
Backprop is hand-derived and verified against central finite differences
in the test suite.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidInputError, NumericError

CHECKPOINT_SCHEMA = 1


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp for large |z|
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax_temperature(logits: np.ndarray, gamma: float) -> np.ndarray:
    """Temperature-smoothed softmax along the last axis.

    Rows sum to 1 within 1e-12 and every entry lies strictly inside (0, 1);
    saturated entries are clamped to the nearest representable value.
    Adding a constant to all logits of a row leaves the output unchanged.
    """
    if not (np.isfinite(gamma) and gamma > 0):
        raise InvalidInputError(f"temperature must be positive and finite, got {gamma}")
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 1:
        raise InvalidInputError("need at least one class")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    z = z / gamma
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


@dataclass
class Batch:
    """One minibatch: inputs, optional labels, optional per-example weights."""

    inputs: np.ndarray
    labels: np.ndarray | None = None
    per_example_weight: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or len(self.inputs) == 0:
            raise InvalidInputError(
                f"batch inputs must be a non-empty 2-d array, got shape {self.inputs.shape}"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.inputs),):
                raise InvalidInputError("labels must be 1-d with one entry per input row")
        if self.per_example_weight is not None:
            w = np.asarray(self.per_example_weight, dtype=np.float64)
            if w.shape != (len(self.inputs),):
                raise InvalidInputError("weights must be 1-d with one entry per input row")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise InvalidInputError("weights must be finite and non-negative")
            self.per_example_weight = w

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass
class DenseLayer:
    W: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)


def _init_layer(fan_in: int, fan_out: int, rng: np.random.Generator) -> DenseLayer:
    # uniform fan-in scaling; the same bound is used for weights and biases
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return DenseLayer(W, b)


class Model:
    """Trunk + heads classifier.

    `forward` caches activations for exactly one `backward`; calling backward
    twice, or before any forward, raises ContractViolation. Gradients come
    back as a dict keyed by parameter path ("trunk.0.W", "head.1.b", ...)
    with zero arrays for heads outside the forwarded head range.
    """

    def __init__(self, input_dim: int, hidden=(64, 64), rng=0):
        if input_dim < 1:
            raise InvalidInputError(f"input_dim must be >= 1, got {input_dim}")
        self.input_dim = int(input_dim)
        self.hidden_sizes = [int(h) for h in hidden]
        if any(h < 1 for h in self.hidden_sizes):
            raise InvalidInputError("hidden sizes must be >= 1")
        self._rng = np.random.default_rng(rng)
        self.trunk: list[DenseLayer] = []
        fan_in = self.input_dim
        for h in self.hidden_sizes:
            self.trunk.append(_init_layer(fan_in, h, self._rng))
            fan_in = h
        self.heads: list[DenseLayer] = []
        self.head_sizes: list[int] = []
        self._cache = None

    @property
    def trunk_dim(self) -> int:
        return self.hidden_sizes[-1] if self.hidden_sizes else self.input_dim

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @property
    def total_classes(self) -> int:
        return sum(self.head_sizes)

    def add_head(self, num_classes: int, rng: np.random.Generator | None = None) -> "Model":
        if num_classes < 1:
            raise InvalidInputError(f"head size must be >= 1, got {num_classes}")
        if rng is None:
            r = self._rng
        elif isinstance(rng, np.random.Generator):
            r = rng
        else:
            r = np.random.default_rng(rng)
        self.heads.append(_init_layer(self.trunk_dim, num_classes, r))
        self.head_sizes.append(int(num_classes))
        return self

    def _resolve_range(self, head_range) -> tuple[int, int]:
        if head_range is None:
            lo, hi = 0, self.num_heads
        else:
            lo, hi = int(head_range[0]), int(head_range[1])
        if not (0 <= lo < hi <= self.num_heads):
            raise InvalidInputError(
                f"head range ({lo}, {hi}) invalid for a model with {self.num_heads} heads"
            )
        return lo, hi

    def class_offset(self, head_index: int) -> int:
        return sum(self.head_sizes[:head_index])

    def range_classes(self, head_range=None) -> int:
        lo, hi = self._resolve_range(head_range)
        return sum(self.head_sizes[lo:hi])

    def forward(self, batch, head_range=None) -> np.ndarray:
        """Logits for the heads in `head_range` ((lo, hi) task indices, hi exclusive)."""
        X = batch.inputs if isinstance(batch, Batch) else np.asarray(batch, dtype=np.float64)
        if X.ndim != 2 or len(X) == 0:
            raise InvalidInputError(f"inputs must be a non-empty 2-d array, got shape {X.shape}")
        if X.shape[1] != self.input_dim:
            raise InvalidInputError(
                f"input dim {X.shape[1]} does not match model dim {self.input_dim}"
            )
        lo, hi = self._resolve_range(head_range)
        activations = [X]
        preacts = []
        a = X
        for layer in self.trunk:
            z = a @ layer.W + layer.b
            preacts.append(z)
            a = softplus(z)
            activations.append(a)
        logits = np.concatenate(
            [a @ self.heads[i].W + self.heads[i].b for i in range(lo, hi)], axis=1
        )
        self._cache = (activations, preacts, (lo, hi), logits.shape)
        return logits

    def backward(self, logit_gradients: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for the most recent forward; consumes the cache."""
        if self._cache is None:
            raise ContractViolation("backward called without a pending forward")
        activations, preacts, (lo, hi), logit_shape = self._cache
        self._cache = None
        g = np.asarray(logit_gradients, dtype=np.float64)
        if g.shape != logit_shape:
            raise ContractViolation(
                f"logit gradient shape {g.shape} does not match forwarded logits {logit_shape}"
            )
        grads: dict[str, np.ndarray] = {}
        a_out = activations[-1]
        da = np.zeros_like(a_out)
        col = 0
        for i, head in enumerate(self.heads):
            if lo <= i < hi:
                dl = g[:, col : col + self.head_sizes[i]]
                col += self.head_sizes[i]
                grads[f"head.{i}.W"] = a_out.T @ dl
                grads[f"head.{i}.b"] = dl.sum(axis=0)
                da += dl @ head.W.T
            else:
                grads[f"head.{i}.W"] = np.zeros_like(head.W)
                grads[f"head.{i}.b"] = np.zeros_like(head.b)
        for li in range(len(self.trunk) - 1, -1, -1):
            dz = da * sigmoid(preacts[li])
            grads[f"trunk.{li}.W"] = activations[li].T @ dz
            grads[f"trunk.{li}.b"] = dz.sum(axis=0)
            da = dz @ self.trunk[li].W.T
        return grads

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by path."""
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.trunk):
            params[f"trunk.{i}.W"] = layer.W
            params[f"trunk.{i}.b"] = layer.b
        for i, head in enumerate(self.heads):
            params[f"head.{i}.W"] = head.W
            params[f"head.{i}.b"] = head.b
        return params

    def snapshot(self) -> "Model":
        """Deep copy with a cleared forward cache; used to freeze reference models."""
        dup = Model.__new__(Model)
        dup.input_dim = self.input_dim
        dup.hidden_sizes = list(self.hidden_sizes)
        dup._rng = copy.deepcopy(self._rng)
        dup.trunk = [DenseLayer(l.W.copy(), l.b.copy()) for l in self.trunk]
        dup.heads = [DenseLayer(l.W.copy(), l.b.copy()) for l in self.heads]
        dup.head_sizes = list(self.head_sizes)
        dup._cache = None
        return dup

    def probs(self, X, gamma: float = 1.0, head_range=None) -> np.ndarray:
        out = softmax_temperature(self.forward(X, head_range), gamma)
        self._cache = None
        return out

    def predict(self, X) -> np.ndarray:
        """Argmax class over all heads (ties go to the lowest class index)."""
        logits = self.forward(X)
        self._cache = None
        return logits.argmax(axis=1)

    def predict_max(self, X) -> tuple[np.ndarray, np.ndarray]:
        """(argmax class, its temperature-1 probability) over all heads."""
        p = self.probs(X)
        y = p.argmax(axis=1)
        return y, p[np.arange(len(p)), y]


@dataclass
class OptimizerState:
    """SGD with classical momentum and coupled L2 weight decay.

    v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v
    """

    lr: float
    momentum: float
    weight_decay: float
    velocity: dict[str, np.ndarray]

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInputError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise InvalidInputError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidInputError(f"weight decay must be >= 0, got {self.weight_decay}")

    @classmethod
    def for_model(cls, model: Model, lr: float, momentum: float, weight_decay: float):
        vel = {path: np.zeros_like(p) for path, p in model.parameters().items()}
        return cls(lr, momentum, weight_decay, vel)


def sgd_step(state: OptimizerState, model: Model, grads: dict[str, np.ndarray]) -> None:
    """Apply one update in place; only paths present in `grads` are touched."""
    params = model.parameters()
    for path, g in grads.items():
        if path not in state.velocity:
            raise ContractViolation(f"no velocity tracked for parameter {path}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {path}")
        v = state.velocity[path]
        v *= state.momentum
        v += g + state.weight_decay * params[path]
        params[path] -= state.lr * v


def save_model(model: Model, path) -> None:
    """Binary checkpoint (numpy .npz): sizes plus one array per parameter path."""
    arrays = {
        "schema": np.array(CHECKPOINT_SCHEMA),
        "input_dim": np.array(model.input_dim),
        "hidden_sizes": np.array(model.hidden_sizes, dtype=np.int64),
        "head_sizes": np.array(model.head_sizes, dtype=np.int64),
    }
    for p, arr in model.parameters().items():
        arrays[p.replace(".", "_")] = arr
    np.savez(path, **arrays)


def load_model(path) -> Model:
    """Restore a checkpoint; the internal init rng is reset (parameters only)."""
    with np.load(path) as f:
        if int(f["schema"]) != CHECKPOINT_SCHEMA:
            raise InvalidInputError(f"unsupported checkpoint schema {int(f['schema'])}")
        model = Model(int(f["input_dim"]), [int(h) for h in f["hidden_sizes"]], rng=0)
        for n in f["head_sizes"]:
            model.add_head(int(n))
        params = model.parameters()
        for p in params:
            params[p][...] = f[p.replace(".", "_")]
    return model
