"""Stage orchestration for class-incremental training.

Each stage: build the labeled pool (new task data plus replay memory),
optionally sample an external set from the unlabeled stream, train a
current-task teacher, train the main model against its reference models,
optionally rebalance via fine-tuning, refresh the replay memory, and
evaluate every task seen so far.

Method variants:
  oracle   - classification only, replaying all past training data
  baseline - classification only on the labeled pool
  lwf      - classification + task-wise distillation from the previous model
             (softmax within each task's own classes)
  dr       - lwf plus distillation from the current-task teacher
  gd       - classification + global distillation from any subset of
             {previous model P, current teacher C, their ensemble Q};
             P and C targets use a global softmax over their class ranges,
             and the Q term trains on external data only
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .config import (
    BALANCING_MODES,
    ExperimentConfig,
    SAMPLING_MODES,
    VARIANT_NAMES,
    VariantConfig,
    resolve_variant,
)
from .coreset import Coreset, update_coreset
from .data import LabeledSet, concat_labeled
from .ensemble import q_predict_batch
from .errors import ConfigError, InvalidInputError
from .metrics import AccuracyMatrix, acc, fgt, task_accuracy
from .nnet import Model, OptimizerState, sgd_step, softmax_temperature
from .sampler import flatten_array, sample_external
from .taskgen import (
    StreamSpec,
    make_geometry,
    make_layout,
    make_stream,
    make_task_sequence,
)

# rng stream roles, keyed as default_rng([seed, stage, role])
R_LAYOUT = 0
R_TASKDATA = 1
R_STREAM = 2
R_TEACHER_INIT = 3
R_TEACHER_BATCH = 4
R_MAIN_HEAD = 5
R_MAIN_BATCH = 6
R_FT = 7
R_CORESET = 8
R_BALANCED = 9


def _rng(seed: int, stage: int, role: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage, role])


@dataclass(frozen=True)
class MethodVariant:
    name: str
    reference_set: frozenset
    sampling: str
    balancing: str
    ood_ratio: float
    label: str

    def __post_init__(self):
        if self.name not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant name {self.name!r}")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if self.balancing not in BALANCING_MODES:
            raise ConfigError(f"unknown balancing mode {self.balancing!r}")
        if not self.reference_set <= {"P", "C", "Q"}:
            raise ConfigError(f"unknown references {sorted(self.reference_set)}")
        if not 0 <= self.ood_ratio <= 1:
            raise ConfigError(f"ood_ratio must be in [0, 1], got {self.ood_ratio}")

    @property
    def use_external(self) -> bool:
        return self.sampling != "none"

    @classmethod
    def from_config(cls, vc: VariantConfig, cfg: ExperimentConfig) -> "MethodVariant":
        r = resolve_variant(vc, cfg)
        implied = {"oracle": (), "baseline": (), "lwf": ("P",), "dr": ("P", "C")}
        refs = tuple(r.references) if r.name == "gd" else implied[r.name]
        return cls(r.name, frozenset(refs), r.sampling, r.balancing, r.ood_ratio, r.label)

    def needs_teacher(self, stage: int) -> bool:
        if stage == 1:
            return True
        if self.name == "dr":
            return True
        return self.name == "gd" and bool(self.reference_set & {"C", "Q"})


@dataclass
class LossTerm:
    """One summand of a composite objective, bound to its dataset role.

    `labels` (for cls terms) are relative to the first class of `head_range`;
    `teacher_probs` (for dst terms) align column-wise with the student logits
    over that range. `loss_weight` scales both the loss and its gradient.
    """

    label: str
    kind: str  # cls | dst | cnf
    head_range: tuple[int, int]
    inputs: np.ndarray
    labels: np.ndarray | None = None
    teacher_probs: np.ndarray | None = None
    gamma: float = 1.0
    loss_weight: float = 1.0
    example_weights: np.ndarray | None = None


class _Cycler:
    """Reshuffled epoch-wise batch index source; batches never straddle a reshuffle."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch = min(batch_size, n)
        self.rng = rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch > self.n:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        out = self.perm[self.pos : self.pos + self.batch]
        self.pos += self.batch
        return out


def _term_loss(model: Model, term: LossTerm, idx: np.ndarray):
    logits = model.forward(term.inputs[idx], term.head_range)
    w = term.example_weights[idx] if term.example_weights is not None else None
    if term.kind == "cls":
        return losses.cls_loss(logits, term.labels[idx], w)
    if term.kind == "dst":
        return losses.dst_loss(logits, term.teacher_probs[idx], term.gamma, w)
    if term.kind == "cnf":
        return losses.cnf_loss(logits)
    raise InvalidInputError(f"unknown loss kind {term.kind!r}")


def build_lr_schedule(base_lr, raw_epochs, raw_decay_epochs, factor, divisor) -> list[float]:
    """Per-epoch learning rates after dividing the raw epoch counts by the
    desk divisor (minimum one epoch; decay points that collapse to 0 drop)."""
    n = max(1, raw_epochs // divisor)
    decays = sorted({d // divisor for d in raw_decay_epochs if 1 <= d // divisor < n})
    out, lr = [], base_lr
    for e in range(n):
        if e in decays:
            lr *= factor
        out.append(lr)
    return out


def _train(
    model: Model,
    terms: list[LossTerm],
    schedule: list[float],
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    *,
    heads_only: bool = False,
    traces: dict | None = None,
    trace_prefix: str = "",
) -> None:
    """Run the composite objective. Every optimization step draws one batch
    per term from that term's own pool; steps per epoch follow the largest
    pool. With heads_only the trunk is left bit-identical."""
    if not terms:
        raise InvalidInputError("cannot train with no loss terms")
    o = cfg.optim
    state = OptimizerState.for_model(model, schedule[0], o.momentum, o.weight_decay)
    cyclers = [_Cycler(len(t.inputs), o.batch_size, rng) for t in terms]
    steps = max(1, math.ceil(max(len(t.inputs) for t in terms) / o.batch_size))
    sums = np.zeros(len(terms))
    for lr in schedule:
        state.lr = lr
        sums[:] = 0.0
        for _ in range(steps):
            total: dict[str, np.ndarray] = {}
            for i, (term, cyc) in enumerate(zip(terms, cyclers)):
                idx = cyc.next()
                loss, dlogits = _term_loss(model, term, idx)
                grads = model.backward(dlogits * term.loss_weight)
                if heads_only:
                    grads = {k: g for k, g in grads.items() if k.startswith("head.")}
                for k, g in grads.items():
                    if k in total:
                        total[k] += g
                    else:
                        total[k] = g
                sums[i] += loss * term.loss_weight
            sgd_step(state, model, total)
        if traces is not None:
            for i, term in enumerate(terms):
                traces.setdefault(trace_prefix + term.label, []).append(float(sums[i] / steps))


def _teacher_schedule(cfg: ExperimentConfig) -> list[float]:
    o = cfg.optim
    return build_lr_schedule(o.lr, o.epochs, o.decay_epochs, o.decay_factor, o.desk_divisor)


def _main_schedule(cfg: ExperimentConfig, with_ft: bool) -> list[float]:
    o = cfg.optim
    if with_ft:
        return build_lr_schedule(o.lr, o.main_epochs_with_ft, o.main_decay_with_ft, o.decay_factor, o.desk_divisor)
    return build_lr_schedule(o.lr, o.epochs, o.decay_epochs, o.decay_factor, o.desk_divisor)


def _ft_schedule(cfg: ExperimentConfig) -> list[float]:
    o = cfg.optim
    return build_lr_schedule(o.ft_lr, o.ft_epochs, o.ft_decay_epochs, o.decay_factor, o.desk_divisor)


def train_current_teacher(
    d_t: LabeledSet,
    d_cor: LabeledSet | None,
    d_ext: np.ndarray,
    cfg: ExperimentConfig,
    *,
    class_offset: int,
    init_rng: np.random.Generator,
    batch_rng: np.random.Generator,
    traces: dict | None = None,
) -> Model:
    """Fresh single-head model for the newest classes: classification on the
    task data plus (optionally) a confidence term pushing the output toward
    uniform on replay-memory and external inputs, which are all
    out-of-distribution for the new classes."""
    n_classes = len(np.unique(d_t.y))
    model = Model(d_t.dim, cfg.model.hidden, rng=init_rng)
    model.add_head(n_classes)
    terms = [
        LossTerm("teacher/cls", "cls", (0, 1), d_t.X, labels=d_t.y - class_offset)
    ]
    pool = [s for s in ((d_cor.X if d_cor is not None and len(d_cor) else None), d_ext) if s is not None and len(s)]
    if cfg.distill.teacher_confidence and cfg.distill.teacher_confidence_weight > 0 and pool:
        cnf_X = np.concatenate(pool, axis=0) if len(pool) > 1 else pool[0]
        terms.append(
            LossTerm(
                "teacher/cnf", "cnf", (0, 1), cnf_X,
                loss_weight=cfg.distill.teacher_confidence_weight,
            )
        )
    _train(model, terms, _teacher_schedule(cfg), cfg, batch_rng, traces=traces)
    return model


def _argmax_pool_weights(teacher_probs: np.ndarray) -> np.ndarray:
    """Inverse-frequency example weights using the teacher's argmax class;
    classes the teacher never predicts simply contribute no examples."""
    lab = teacher_probs.argmax(axis=1)
    counts = np.bincount(lab, minlength=teacher_probs.shape[1])
    return len(lab) / (teacher_probs.shape[1] * counts[lab])


def build_main_terms(
    p: Model | None,
    c: Model | None,
    d_trn: LabeledSet,
    d_ext: np.ndarray,
    variant: MethodVariant,
    cfg: ExperimentConfig,
    task_sizes: list[int],
    *,
    weighted: bool = False,
) -> list[LossTerm]:
    """Assemble the composite objective for the main model at stage t >= 2.

    Scales follow the trained-range share: a term training `k` of the
    `total` classes carries weight k / total, so the classification term and
    the ensemble distillation term (which cover everything) carry 1.
    """
    t = len(task_sizes)
    total = sum(task_sizes)
    cur = task_sizes[-1]
    prev_total = total - cur
    dst = cfg.distill
    if len(d_ext):
        pool_X = np.concatenate([d_trn.X, d_ext], axis=0)
    else:
        pool_X = d_trn.X

    cls_w = None
    if weighted:
        cls_w = losses.data_weights(d_trn.y, range(total)).weights_for(d_trn.y)
    terms = [
        LossTerm("cls", "cls", (0, t), d_trn.X, labels=d_trn.y, example_weights=cls_w)
    ]
    if variant.name in ("baseline", "oracle"):
        return terms

    if variant.name == "gd":
        if "P" in variant.reference_set:
            probs = p.probs(pool_X, dst.gamma_prev)
            terms.append(
                LossTerm(
                    "dst_prev", "dst", (0, t - 1), pool_X, teacher_probs=probs,
                    gamma=dst.gamma_prev,
                    loss_weight=losses.loss_weight(prev_total, total),
                    example_weights=_argmax_pool_weights(probs) if weighted else None,
                )
            )
        if "C" in variant.reference_set:
            probs = c.probs(pool_X, dst.gamma_cur)
            terms.append(
                LossTerm(
                    "dst_cur", "dst", (t - 1, t), pool_X, teacher_probs=probs,
                    gamma=dst.gamma_cur,
                    loss_weight=losses.loss_weight(cur, total),
                    example_weights=_argmax_pool_weights(probs) if weighted else None,
                )
            )
        if "Q" in variant.reference_set and len(d_ext):
            # the ensemble term trains on external data only; with no
            # external data it contributes exactly zero and is dropped
            pe = p.probs(d_ext, dst.ensemble_input_temperature)
            ce = c.probs(d_ext, dst.ensemble_input_temperature)
            q = q_predict_batch(pe, ce)
            terms.append(
                LossTerm(
                    "dst_ens", "dst", (0, t), d_ext, teacher_probs=q,
                    gamma=dst.gamma_ensemble,
                    example_weights=_argmax_pool_weights(q) if weighted else None,
                )
            )
        return terms

    # lwf / dr: task-wise distillation, softmax restricted to each past task
    logits = p.forward(pool_X)
    p._cache = None
    for s in range(t - 1):
        lo = p.class_offset(s)
        sl = softmax_temperature(logits[:, lo : lo + p.head_sizes[s]], dst.gamma_prev)
        terms.append(
            LossTerm(
                f"dst_task{s + 1}", "dst", (s, s + 1), pool_X, teacher_probs=sl,
                gamma=dst.gamma_prev,
                loss_weight=losses.loss_weight(task_sizes[s], total),
                example_weights=_argmax_pool_weights(sl) if weighted else None,
            )
        )
    if variant.name == "dr":
        probs = c.probs(pool_X, dst.gamma_cur)
        terms.append(
            LossTerm(
                "dst_cur", "dst", (t - 1, t), pool_X, teacher_probs=probs,
                gamma=dst.gamma_cur,
                loss_weight=losses.loss_weight(cur, total),
                example_weights=_argmax_pool_weights(probs) if weighted else None,
            )
        )
    return terms


def train_main(
    p: Model,
    c: Model | None,
    d_trn: LabeledSet,
    d_ext: np.ndarray,
    variant: MethodVariant,
    cfg: ExperimentConfig,
    task_sizes: list[int],
    *,
    head_rng: np.random.Generator,
    batch_rng: np.random.Generator,
    traces: dict | None = None,
) -> Model:
    """Warm-start from the previous model, grow a head for the new classes,
    and train the variant's composite objective."""
    m = p.snapshot()
    m.add_head(task_sizes[-1], rng=head_rng)
    weighted = variant.balancing == "dw"
    terms = build_main_terms(p, c, d_trn, d_ext, variant, cfg, task_sizes, weighted=weighted)
    with_ft = variant.balancing in ("ft_dset", "ft_dw")
    _train(m, terms, _main_schedule(cfg, with_ft), cfg, batch_rng, traces=traces)
    return m


def _undersample_balanced(d: LabeledSet, rng: np.random.Generator) -> LabeledSet:
    counts = d.class_counts()
    m = min(counts.values())
    picked = []
    for cl in sorted(counts):
        idx = np.flatnonzero(d.y == cl)
        picked.append(rng.choice(idx, size=m, replace=False))
    return d.subset(np.concatenate(picked))


def balanced_finetune(
    m: Model,
    p: Model | None,
    c: Model | None,
    d_trn: LabeledSet,
    d_ext: np.ndarray,
    variant: MethodVariant,
    cfg: ExperimentConfig,
    task_sizes: list[int],
    *,
    rng: np.random.Generator,
    traces: dict | None = None,
) -> Model:
    """Post-training rebalancing step.

    none / dw: returned model is bit-identical to the input (dw acts during
    the main phase). ft_dw: heads only, same terms, inverse-frequency
    example weights everywhere. ft_dset: whole network on an undersampled
    class-balanced labeled pool, unweighted.
    """
    mode = variant.balancing
    if mode in ("none", "dw"):
        return m
    schedule = _ft_schedule(cfg)
    if mode == "ft_dw":
        terms = build_main_terms(p, c, d_trn, d_ext, variant, cfg, task_sizes, weighted=True)
        _train(m, terms, schedule, cfg, rng, heads_only=True, traces=traces, trace_prefix="ft/")
    else:  # ft_dset
        balanced = _undersample_balanced(d_trn, rng)
        terms = build_main_terms(p, c, balanced, d_ext, variant, cfg, task_sizes, weighted=False)
        _train(m, terms, schedule, cfg, rng, traces=traces, trace_prefix="ft/")
    return m


@dataclass
class StageResult:
    stage: int  # 1-based
    model: Model
    coreset: Coreset
    per_task_test_accuracy: list[float]
    wall_time: float
    loss_traces: dict[str, list[float]]
    external_size: int = 0


@dataclass
class SequenceOutcome:
    matrix: AccuracyMatrix
    results: list[StageResult]

    def stage_records(self) -> list[dict]:
        """JSON-ready per-stage records (deterministic fields only)."""
        sizes = self.matrix.task_sizes
        records = []
        for res in self.results:
            t = res.stage
            rec = {
                "stage": t,
                "classes_seen": sum(sizes[:t]),
                "per_task_accuracy": list(res.per_task_test_accuracy),
                "external_size": res.external_size,
                "loss_traces": res.loss_traces,
            }
            if t >= 2:
                sub = AccuracyMatrix(
                    sizes[:t],
                    {k: v for k, v in self.matrix.entries.items() if k[1] <= t},
                )
                rec["acc"] = acc(sub)
                rec["fgt"] = fgt(sub)
            else:
                rec["acc"] = None
                rec["fgt"] = None
            records.append(rec)
        return records


class Trial:
    """One (config, variant, seed) run over the synthetic benchmark.

    Builds the task sequence up front; `run_stage` is sequential (pass the
    result of the previous stage or None for stage 1), `run` drives all
    stages and assembles the accuracy matrix.
    """

    def __init__(self, cfg: ExperimentConfig, variant: MethodVariant, seed: int):
        self.cfg = cfg
        self.variant = variant
        self.seed = int(seed)
        tk = cfg.task
        self.geometry = make_geometry(
            tk.num_classes,
            tk.input_dim,
            np.random.default_rng([tk.geometry_seed]),
            n_ood_clusters=tk.ood_clusters,
            sigma=tk.cluster_sigma,
            min_separation=tk.min_separation,
            box_halfwidth=tk.box_halfwidth,
            ood_margin=tk.ood_margin,
        )
        self.layout = make_layout(tk.num_classes, tk.task_size, _rng(self.seed, 0, R_LAYOUT))
        self.tasks = make_task_sequence(
            self.layout, self.geometry, tk.per_class_train, tk.per_class_test,
            _rng(self.seed, 0, R_TASKDATA),
        )
        self.test_sets = [te for _, te in self.tasks]
        self._replay: list[LabeledSet] = []

    def _effective_ood_ratio(self, stage: int) -> float:
        if stage == 1:
            return 1.0  # no previous model to score with
        if self.variant.sampling == "random_only":
            return 1.0
        if self.variant.sampling == "pred_only":
            return 0.0
        return self.variant.ood_ratio

    def run_stage(self, prev: StageResult | None, d_t: LabeledSet, stream) -> StageResult:
        cfg, v = self.cfg, self.variant
        t0 = time.perf_counter()
        t = 1 if prev is None else prev.stage + 1
        prev_total = prev.model.total_classes if prev else 0
        new_classes = np.unique(d_t.y)
        if not np.array_equal(new_classes, np.arange(prev_total, prev_total + len(new_classes))):
            raise ConfigError(
                f"stage {t} labels {new_classes.tolist()} must form the contiguous "
                f"range starting at {prev_total}"
            )
        cur = len(new_classes)
        task_sizes = (list(prev.model.head_sizes) if prev else []) + [cur]
        d_cor = prev.coreset.examples if prev and len(prev.coreset) else None
        d_trn = concat_labeled([d_t, d_cor]) if d_cor is not None else d_t

        d_ext = np.empty((0, d_t.dim))
        if v.use_external:
            n_d = cfg.sampling.external_size or len(d_trn)
            ratio = self._effective_ood_ratio(t)
            ext = sample_external(
                prev.model if prev else None, stream, n_d,
                cfg.sampling.budget_multiplier * n_d, ratio,
            )
            d_ext = flatten_array(ext, d_t.dim)

        traces: dict[str, list[float]] = {}
        teacher = None
        if v.needs_teacher(t):
            teacher = train_current_teacher(
                d_t, d_cor, d_ext, cfg,
                class_offset=prev_total,
                init_rng=_rng(self.seed, t, R_TEACHER_INIT),
                batch_rng=_rng(self.seed, t, R_TEACHER_BATCH),
                traces=traces,
            )

        if v.name == "oracle":
            self._replay.append(d_t)

        if t == 1:
            model = teacher
        elif v.name == "oracle":
            model = train_main(
                prev.model, None, concat_labeled(self._replay), d_ext, v, cfg, task_sizes,
                head_rng=_rng(self.seed, t, R_MAIN_HEAD),
                batch_rng=_rng(self.seed, t, R_MAIN_BATCH),
                traces=traces,
            )
        else:
            model = train_main(
                prev.model, teacher, d_trn, d_ext, v, cfg, task_sizes,
                head_rng=_rng(self.seed, t, R_MAIN_HEAD),
                batch_rng=_rng(self.seed, t, R_MAIN_BATCH),
                traces=traces,
            )
            model = balanced_finetune(
                model, prev.model, teacher, d_trn, d_ext, v, cfg, task_sizes,
                rng=_rng(self.seed, t, R_FT if v.balancing == "ft_dw" else R_BALANCED),
                traces=traces,
            )

        cs = update_coreset(
            d_trn, cfg.coreset_capacity(), range(prev_total + cur),
            _rng(self.seed, t, R_CORESET),
        )
        accs = [task_accuracy(model, self.test_sets[r]) for r in range(t)]
        return StageResult(
            t, model, cs, accs, time.perf_counter() - t0, traces, len(d_ext)
        )

    def run(self) -> SequenceOutcome:
        spec = StreamSpec(self.cfg.stream.prev_like_fraction)
        results: list[StageResult] = []
        prev = None
        for t in range(1, self.layout.num_tasks + 1):
            stream = make_stream(
                self.layout, self.geometry, t, spec, _rng(self.seed, t, R_STREAM)
            )
            prev = self.run_stage(prev, self.tasks[t - 1][0], stream)
            results.append(prev)
        matrix = AccuracyMatrix([self.layout.task_size] * self.layout.num_tasks)
        for res in results:
            for r, a in enumerate(res.per_task_test_accuracy, start=1):
                matrix.set(r, res.stage, a)
        return SequenceOutcome(matrix, results)


def run_sequence(cfg: ExperimentConfig, variant: MethodVariant, seed: int) -> SequenceOutcome:
    """Run one full trial; sequences need at least two tasks for the metrics."""
    if cfg.num_tasks < 2:
        raise ConfigError("a class-incremental sequence needs at least two tasks")
    return Trial(cfg, variant, seed).run()
