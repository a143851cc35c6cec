"""Experiment configuration: nested YAML with strict keys.

An empty document resolves to a fully valid default configuration. Unknown
keys are rejected with their full key path, as are out-of-range values.
Raw epoch counts describe the full-scale schedule; the trainer divides them
by `optim.desk_divisor` (min 1 epoch) so desk runs stay fast, and the same
divisor scales the replay-memory capacity.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1

VARIANT_NAMES = ("oracle", "baseline", "lwf", "dr", "gd")
SAMPLING_MODES = ("none", "random_only", "pred_only", "combined")
BALANCING_MODES = ("none", "dw", "ft_dset", "ft_dw")
REFERENCES = ("P", "C", "Q")


@dataclass
class TaskConfig:
    num_classes: int = 20
    task_size: int = 10
    input_dim: int = 8
    per_class_train: int = 200
    per_class_test: int = 50
    cluster_sigma: float = 3.0
    min_separation: float = 6.0
    box_halfwidth: float = 10.0
    ood_clusters: int = 8
    ood_margin: float = 2.0
    geometry_seed: int = 7


@dataclass
class StreamConfig:
    prev_like_fraction: float = 0.2


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])


@dataclass
class OptimConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 200
    decay_epochs: list[int] = field(default_factory=lambda: [120, 160, 180])
    decay_factor: float = 0.1
    main_epochs_with_ft: int = 180
    main_decay_with_ft: list[int] = field(default_factory=lambda: [120, 160, 170])
    ft_epochs: int = 20
    ft_lr: float = 0.01
    ft_decay_epochs: list[int] = field(default_factory=lambda: [10, 15])
    desk_divisor: int = 10


@dataclass
class SamplingConfig:
    mode: str = "combined"
    ood_ratio: float = 0.7
    external_size: int | None = None  # None: match the labeled pool size
    budget_multiplier: int = 4        # retrieval budget = multiplier * external size


@dataclass
class DistillConfig:
    gamma_prev: float = 2.0
    gamma_cur: float = 2.0
    gamma_ensemble: float = 1.0
    ensemble_input_temperature: float = 1.0
    teacher_confidence: bool = True
    teacher_confidence_weight: float = 1.0


@dataclass
class CoresetConfig:
    size: int = 200


@dataclass
class VariantConfig:
    name: str = "gd"
    references: list[str] | None = None
    sampling: str | None = None
    balancing: str | None = None
    ood_ratio: float | None = None
    label: str | None = None


def _default_variants() -> list[VariantConfig]:
    return [
        VariantConfig("baseline", sampling="none", balancing="none", label="baseline"),
        VariantConfig("gd", sampling="none", label="gd"),
        VariantConfig("gd", sampling="combined", label="gd+ext"),
    ]


@dataclass
class ExperimentConfig:
    schema: int = SCHEMA_VERSION
    task: TaskConfig = field(default_factory=TaskConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    coreset: CoresetConfig = field(default_factory=CoresetConfig)
    balancing: str = "ft_dw"
    variants: list[VariantConfig] = field(default_factory=_default_variants)
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    output_dir: str = "results"

    @property
    def num_tasks(self) -> int:
        return self.task.num_classes // self.task.task_size

    def coreset_capacity(self) -> int:
        return max(1, self.coreset.size // self.optim.desk_divisor)


class _Scope:
    """Strict view over one mapping level; leftover keys are an error."""

    def __init__(self, mapping, path: str):
        if mapping is None:
            mapping = {}
        if not isinstance(mapping, dict):
            raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(mapping).__name__}")
        self.mapping = dict(mapping)
        self.path = path

    def key(self, name: str) -> str:
        return f"{self.path}.{name}" if self.path else name

    def take(self, name: str, default):
        return self.mapping.pop(name, default)

    def finish(self) -> None:
        if self.mapping:
            extra = ", ".join(sorted(str(k) for k in self.mapping))
            raise ConfigError(f"{self.path or '<root>'}: unknown keys: {extra}")


def _int(value, path, lo=None, hi=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {value}")
    return value


def _float(value, path, lo=None, hi=None, lo_open=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    v = float(value)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        bound = ">" if lo_open else ">="
        raise ConfigError(f"{path}: must be {bound} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {v}")
    return v


def _bool(value, path) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    return value


def _str(value, path, choices=None) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(f"{path}: must be one of {list(choices)}, got {value!r}")
    return value


def _int_list(value, path, lo=None) -> list[int]:
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {value!r}")
    return [_int(v, f"{path}[{i}]", lo=lo) for i, v in enumerate(value)]


def _parse_task(node, path) -> TaskConfig:
    s = _Scope(node, path)
    d = TaskConfig()
    out = TaskConfig(
        num_classes=_int(s.take("num_classes", d.num_classes), s.key("num_classes"), lo=2),
        task_size=_int(s.take("task_size", d.task_size), s.key("task_size"), lo=1),
        input_dim=_int(s.take("input_dim", d.input_dim), s.key("input_dim"), lo=1),
        per_class_train=_int(s.take("per_class_train", d.per_class_train), s.key("per_class_train"), lo=1),
        per_class_test=_int(s.take("per_class_test", d.per_class_test), s.key("per_class_test"), lo=1),
        cluster_sigma=_float(s.take("cluster_sigma", d.cluster_sigma), s.key("cluster_sigma"), lo=0, lo_open=True),
        min_separation=_float(s.take("min_separation", d.min_separation), s.key("min_separation"), lo=0),
        box_halfwidth=_float(s.take("box_halfwidth", d.box_halfwidth), s.key("box_halfwidth"), lo=0, lo_open=True),
        ood_clusters=_int(s.take("ood_clusters", d.ood_clusters), s.key("ood_clusters"), lo=1),
        ood_margin=_float(s.take("ood_margin", d.ood_margin), s.key("ood_margin"), lo=0),
        geometry_seed=_int(s.take("geometry_seed", d.geometry_seed), s.key("geometry_seed"), lo=0),
    )
    s.finish()
    if out.num_classes % out.task_size != 0:
        raise ConfigError(
            f"{path}.task_size: {out.task_size} must divide num_classes {out.num_classes}"
        )
    if out.num_classes // out.task_size < 2:
        raise ConfigError(f"{path}: the layout must contain at least two tasks")
    return out


def _parse_stream(node, path) -> StreamConfig:
    s = _Scope(node, path)
    out = StreamConfig(
        prev_like_fraction=_float(
            s.take("prev_like_fraction", StreamConfig.prev_like_fraction),
            s.key("prev_like_fraction"), lo=0, hi=1,
        )
    )
    s.finish()
    return out


def _parse_model(node, path) -> ModelConfig:
    s = _Scope(node, path)
    out = ModelConfig(hidden=_int_list(s.take("hidden", [64, 64]), s.key("hidden"), lo=1))
    s.finish()
    return out


def _parse_optim(node, path) -> OptimConfig:
    s = _Scope(node, path)
    d = OptimConfig()
    out = OptimConfig(
        lr=_float(s.take("lr", d.lr), s.key("lr"), lo=0, lo_open=True),
        momentum=_float(s.take("momentum", d.momentum), s.key("momentum"), lo=0, hi=1),
        weight_decay=_float(s.take("weight_decay", d.weight_decay), s.key("weight_decay"), lo=0),
        batch_size=_int(s.take("batch_size", d.batch_size), s.key("batch_size"), lo=1),
        epochs=_int(s.take("epochs", d.epochs), s.key("epochs"), lo=1),
        decay_epochs=_int_list(s.take("decay_epochs", list(d.decay_epochs)), s.key("decay_epochs"), lo=1),
        decay_factor=_float(s.take("decay_factor", d.decay_factor), s.key("decay_factor"), lo=0, hi=1, lo_open=True),
        main_epochs_with_ft=_int(s.take("main_epochs_with_ft", d.main_epochs_with_ft), s.key("main_epochs_with_ft"), lo=1),
        main_decay_with_ft=_int_list(s.take("main_decay_with_ft", list(d.main_decay_with_ft)), s.key("main_decay_with_ft"), lo=1),
        ft_epochs=_int(s.take("ft_epochs", d.ft_epochs), s.key("ft_epochs"), lo=1),
        ft_lr=_float(s.take("ft_lr", d.ft_lr), s.key("ft_lr"), lo=0, lo_open=True),
        ft_decay_epochs=_int_list(s.take("ft_decay_epochs", list(d.ft_decay_epochs)), s.key("ft_decay_epochs"), lo=1),
        desk_divisor=_int(s.take("desk_divisor", d.desk_divisor), s.key("desk_divisor"), lo=1),
    )
    if out.momentum >= 1:
        raise ConfigError(f"{path}.momentum: must be < 1, got {out.momentum}")
    s.finish()
    return out


def _parse_sampling(node, path) -> SamplingConfig:
    s = _Scope(node, path)
    d = SamplingConfig()
    ext = s.take("external_size", d.external_size)
    out = SamplingConfig(
        mode=_str(s.take("mode", d.mode), s.key("mode"), SAMPLING_MODES),
        ood_ratio=_float(s.take("ood_ratio", d.ood_ratio), s.key("ood_ratio"), lo=0, hi=1),
        external_size=None if ext is None else _int(ext, s.key("external_size"), lo=1),
        budget_multiplier=_int(s.take("budget_multiplier", d.budget_multiplier), s.key("budget_multiplier"), lo=1),
    )
    s.finish()
    return out


def _parse_distill(node, path) -> DistillConfig:
    s = _Scope(node, path)
    d = DistillConfig()
    out = DistillConfig(
        gamma_prev=_float(s.take("gamma_prev", d.gamma_prev), s.key("gamma_prev"), lo=0, lo_open=True),
        gamma_cur=_float(s.take("gamma_cur", d.gamma_cur), s.key("gamma_cur"), lo=0, lo_open=True),
        gamma_ensemble=_float(s.take("gamma_ensemble", d.gamma_ensemble), s.key("gamma_ensemble"), lo=0, lo_open=True),
        ensemble_input_temperature=_float(
            s.take("ensemble_input_temperature", d.ensemble_input_temperature),
            s.key("ensemble_input_temperature"), lo=0, lo_open=True,
        ),
        teacher_confidence=_bool(s.take("teacher_confidence", d.teacher_confidence), s.key("teacher_confidence")),
        teacher_confidence_weight=_float(
            s.take("teacher_confidence_weight", d.teacher_confidence_weight),
            s.key("teacher_confidence_weight"), lo=0,
        ),
    )
    s.finish()
    return out


def _parse_coreset(node, path) -> CoresetConfig:
    s = _Scope(node, path)
    out = CoresetConfig(size=_int(s.take("size", CoresetConfig.size), s.key("size"), lo=0))
    s.finish()
    return out


def _parse_variant(node, path) -> VariantConfig:
    s = _Scope(node, path)
    name = _str(s.take("name", None) or "", s.key("name"), VARIANT_NAMES)
    refs = s.take("references", None)
    if refs is not None:
        if not isinstance(refs, list):
            raise ConfigError(f"{s.key('references')}: expected a list")
        refs = [_str(r, f"{s.key('references')}[{i}]", REFERENCES) for i, r in enumerate(refs)]
        if len(set(refs)) != len(refs):
            raise ConfigError(f"{s.key('references')}: duplicate entries")
    sampling = s.take("sampling", None)
    if sampling is not None:
        sampling = _str(sampling, s.key("sampling"), SAMPLING_MODES)
    balancing = s.take("balancing", None)
    if balancing is not None:
        balancing = _str(balancing, s.key("balancing"), BALANCING_MODES)
    ood_ratio = s.take("ood_ratio", None)
    if ood_ratio is not None:
        ood_ratio = _float(ood_ratio, s.key("ood_ratio"), lo=0, hi=1)
    label = s.take("label", None)
    if label is not None:
        label = _str(label, s.key("label"))
    s.finish()
    if name != "gd" and refs is not None:
        raise ConfigError(f"{path}: references can only be chosen for the gd variant")
    if name in ("oracle", "baseline"):
        if sampling not in (None, "none"):
            raise ConfigError(f"{path}: variant {name} does not consume external data")
        sampling = "none"
    if name == "oracle":
        if balancing not in (None, "none"):
            raise ConfigError(f"{path}: the oracle replays all data and is never rebalanced")
        balancing = "none"
    return VariantConfig(name, refs, sampling, balancing, ood_ratio, label)


def resolve_variant(vc: VariantConfig, cfg: "ExperimentConfig") -> VariantConfig:
    """Fill per-variant defaults from the top-level config and derive a label."""
    refs = vc.references
    if refs is None:
        refs = ["P", "C", "Q"] if vc.name == "gd" else []
    sampling = vc.sampling if vc.sampling is not None else cfg.sampling.mode
    if vc.name in ("oracle", "baseline"):
        sampling = "none"
    balancing = vc.balancing if vc.balancing is not None else cfg.balancing
    if vc.name == "oracle":
        balancing = "none"
    ood_ratio = vc.ood_ratio if vc.ood_ratio is not None else cfg.sampling.ood_ratio
    label = vc.label
    if label is None:
        label = vc.name
        if vc.name == "gd" and set(refs) != {"P", "C", "Q"}:
            canon = [r for r in REFERENCES if r in refs]
            label += "[" + ",".join(canon) + "]" if canon else "[]"
        if sampling != "none":
            label += "+ext"
    return VariantConfig(vc.name, sorted(refs), sampling, balancing, ood_ratio, label)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a YAML config document; '' gives all defaults."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from None
    s = _Scope(doc, "")
    schema = _int(s.take("schema", SCHEMA_VERSION), "schema", lo=1, hi=SCHEMA_VERSION)
    cfg = ExperimentConfig(
        schema=schema,
        task=_parse_task(s.take("task", {}), "task"),
        stream=_parse_stream(s.take("stream", {}), "stream"),
        model=_parse_model(s.take("model", {}), "model"),
        optim=_parse_optim(s.take("optim", {}), "optim"),
        sampling=_parse_sampling(s.take("sampling", {}), "sampling"),
        distill=_parse_distill(s.take("distill", {}), "distill"),
        coreset=_parse_coreset(s.take("coreset", {}), "coreset"),
        balancing=_str(s.take("balancing", "ft_dw"), "balancing", BALANCING_MODES),
        seeds=_int_list(s.take("seeds", list(range(10))), "seeds", lo=0),
        output_dir=_str(s.take("output_dir", "results"), "output_dir"),
    )
    variants_node = s.take("variants", None)
    s.finish()
    if variants_node is not None:
        if not isinstance(variants_node, list) or not variants_node:
            raise ConfigError("variants: expected a non-empty list")
        cfg.variants = [
            _parse_variant(v, f"variants[{i}]") for i, v in enumerate(variants_node)
        ]
    if not cfg.seeds:
        raise ConfigError("seeds: expected at least one seed")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds: duplicate entries")
    labels = [resolve_variant(v, cfg).label for v in cfg.variants]
    dup = {l for l in labels if labels.count(l) > 1}
    if dup:
        raise ConfigError(f"variants: duplicate labels {sorted(dup)}; set explicit labels")
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return parse_config(f.read())


def serialize_config(cfg: ExperimentConfig) -> str:
    """YAML round-trip companion of parse_config."""
    doc = asdict(cfg)
    doc["variants"] = [
        {k: v for k, v in asdict(vc).items() if v is not None} for vc in cfg.variants
    ]
    return yaml.safe_dump(doc, sort_keys=False)
