"""Experiment configuration: nested YAML <-> dataclasses with field-level validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from dynmetric.losses import BASE_LOSSES, STAR_LOSSES, resolve_variant

# margin / scale defaults per loss family; contrastive is not given one upstream
LOSS_DEFAULTS = {
    "contrastive": {"lam": 0.5, "alpha": 2.0, "beta": 40.0},
    "bd": {"lam": 0.5, "alpha": 2.0, "beta": 40.0},
    "triplet": {"lam": 0.5, "alpha": 2.0, "beta": 40.0},
    "lifted": {"lam": 1.0, "alpha": 2.0, "beta": 40.0},
    "ms": {"lam": 0.5, "alpha": 2.0, "beta": 50.0},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class LossConfig:
    name: str = "bd"
    variant: str = "star"
    lam: float | None = None
    alpha: float | None = None
    beta: float | None = None
    bd_normalization: str = "per_anchor"
    ms_star_scale_weights: bool = False
    triplet_star_form: str = "per_triplet"


@dataclass
class ThresholdConfig:
    tau_p: float = 0.9
    tau_n: float = 0.1
    tau_b: float = 0.1
    min_over: str = "all"


@dataclass
class ScheduleConfig:
    epochs: int = 30


@dataclass
class SamplerSection:
    classes_per_batch: int = 25
    images_per_class: int = 5


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class ModelConfig:
    embedding_dim: int = 512
    bias: bool = True


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str | None = None
    num_classes: int = 30
    samples_per_class: int = 40
    d_in: int = 32
    spread: float = 0.15
    split_mode: str = "shared-classes"
    split_fraction: float = 0.8


@dataclass
class EvalConfig:
    ks: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    every: int = 1


@dataclass
class ExperimentConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_SECTIONS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(where: str, value, annotation: str):
    ann = annotation.replace(" | None", "")
    if value is None:
        if "None" in annotation:
            return None
        raise ConfigError(f"{where}: value required")
    if ann == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if ann == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if ann == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if ann == "list[int]":
        if not isinstance(value, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"{where}: expected a list of integers, got {value!r}")
        return list(value)
    raise AssertionError(f"unhandled annotation {annotation}")


def _section(name: str, cls, raw) -> object:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown field")
    kwargs = {k: _coerce(f"{name}.{k}", v, known[k].type) for k, v in raw.items()}
    return cls(**kwargs)


def _check(cond: bool, where: str, msg: str):
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check cross-field constraints and fill per-loss parameter defaults in place."""
    lc = cfg.loss
    _check(lc.name in BASE_LOSSES, "loss.name", f"unknown loss {lc.name!r}; expected one of {sorted(BASE_LOSSES)}")
    try:
        lc.variant = resolve_variant(lc.variant)
    except ValueError as exc:
        raise ConfigError(f"loss.variant: {exc}") from None
    _check(
        lc.variant in ("base", "thresholded") or lc.name in STAR_LOSSES,
        "loss.variant",
        f"loss {lc.name!r} has no re-weighted form",
    )
    for key, default in LOSS_DEFAULTS[lc.name].items():
        if getattr(lc, key) is None:
            setattr(lc, key, default)
    _check(lc.alpha > 0, "loss.alpha", "must be > 0")
    _check(lc.beta > 0, "loss.beta", "must be > 0")
    _check(0.0 <= lc.lam <= 1.0, "loss.lam", "must lie in [0, 1]")
    _check(lc.bd_normalization in ("per_anchor", "global"), "loss.bd_normalization", "per_anchor or global")
    _check(lc.triplet_star_form in ("per_triplet", "per_anchor"), "loss.triplet_star_form", "per_triplet or per_anchor")

    th = cfg.thresholds
    _check(0.0 <= th.tau_n < th.tau_p <= 1.0, "thresholds", "need 0 <= tau_n < tau_p <= 1")
    _check(th.tau_b >= 0, "thresholds.tau_b", "must be >= 0")
    _check(th.min_over in ("all", "admitted"), "thresholds.min_over", "all or admitted")

    _check(cfg.schedule.epochs >= 1, "schedule.epochs", "must be >= 1")
    _check(cfg.sampler.classes_per_batch >= 2, "sampler.classes_per_batch", "must be >= 2")
    _check(cfg.sampler.images_per_class >= 2, "sampler.images_per_class", "must be >= 2")
    op = cfg.optimizer
    _check(op.lr >= 0, "optimizer.lr", "must be >= 0")
    _check(0 <= op.beta1 < 1, "optimizer.beta1", "must lie in [0, 1)")
    _check(0 <= op.beta2 < 1, "optimizer.beta2", "must lie in [0, 1)")
    _check(op.epsilon > 0, "optimizer.epsilon", "must be > 0")
    _check(cfg.model.embedding_dim >= 2, "model.embedding_dim", "must be >= 2")

    dc = cfg.data
    _check(dc.source in ("synthetic", "csv"), "data.source", "synthetic or csv")
    if dc.source == "csv":
        _check(bool(dc.path), "data.path", "required when data.source is csv")
    else:
        _check(dc.num_classes >= 2, "data.num_classes", "must be >= 2")
        _check(dc.samples_per_class >= 2, "data.samples_per_class", "must be >= 2")
        _check(dc.d_in >= 1, "data.d_in", "must be >= 1")
        _check(dc.spread >= 0, "data.spread", "must be >= 0")
    _check(dc.split_mode in ("shared-classes", "disjoint-classes"), "data.split_mode", "shared-classes or disjoint-classes")
    _check(0.0 < dc.split_fraction < 1.0, "data.split_fraction", "must lie in (0, 1)")

    _check(len(cfg.eval.ks) > 0 and all(k >= 1 for k in cfg.eval.ks), "eval.ks", "non-empty list of K >= 1")
    _check(cfg.eval.every >= 1, "eval.every", "must be >= 1")
    return cfg


def from_dict(raw: dict | None) -> ExperimentConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown field")
    kwargs = {}
    for name, value in raw.items():
        if name == "seed":
            kwargs["seed"] = _coerce("seed", value, "int")
        else:
            kwargs[name] = _section(name, _SECTIONS[name].default_factory, value)
    return validate(ExperimentConfig(**kwargs))


def loads(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: not valid YAML ({exc})") from None
    return from_dict(raw)


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: no such file {path}")
    return loads(path.read_text(encoding="utf-8"))


def default_config() -> ExperimentConfig:
    return validate(ExperimentConfig())
