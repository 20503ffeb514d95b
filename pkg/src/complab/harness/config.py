"""Experiment configuration: one YAML file per experiment, fully explicit after loading.

Missing keys take the defaults below at load time; the resolved tree is
written next to the results so every run records every hyperparameter.
Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..losses import KDConfig
from ..models import BlockSpec, ModelSpec
from ..policy import DecaySchedule
from ..selection import SelectionConfig
from .data import load_dataset, resolve_path
from .schemes import EXTRA_KINDS, KD_KINDS, KINDS, PRUNE_KINDS, StageSettings

SECTIONS = ("grid", "prune", "decay", "scheme", "distill")


def _default_synthetic():
    return {"n_samples": 5000, "image_size": 16, "num_classes": 10, "channels": 1, "strokes": 3,
            "rotation": 20.0, "shift": 2.0, "scale": 0.1, "noise": 0.15, "seed": 0}


def _default_models():
    return {
        "small": {"input_shape": [1, 16, 16], "blocks": [8, 16], "num_classes": 10, "extra_blocks": 0},
        "teacher": {"input_shape": [1, 16, 16], "blocks": [16, 32], "num_classes": 10, "extra_blocks": 0},
    }


@dataclass
class DataConfig:
    format: str = "synthetic"
    path: str | None = None  # relative paths resolve against $COMPLAB_DATA_ROOT
    labels_path: str | None = None  # idx only
    val_fraction: float = 0.2
    split_seed: int = 0
    limit: int | None = None
    synthetic: dict = field(default_factory=_default_synthetic)

    def load(self):
        if self.format == "synthetic":
            return load_dataset(format="synthetic", val_fraction=self.val_fraction, split_seed=self.split_seed,
                                limit=self.limit, **self.synthetic)
        if self.path is None:
            raise ConfigError(f"data.path is required for format {self.format!r}")
        extra = {"labels_path": resolve_path(self.labels_path)} if self.labels_path else {}
        return load_dataset(resolve_path(self.path), self.format, val_fraction=self.val_fraction,
                            split_seed=self.split_seed, limit=self.limit, **extra)


@dataclass
class TrainConfig:
    epochs: int = 8
    batch_size: int = 64
    lr: float = 0.02
    momentum: float = 0.9

    def stage(self, epochs: int | None = None) -> StageSettings:
        return StageSettings(self.epochs if epochs is None else epochs, self.batch_size, self.lr, self.momentum)


@dataclass
class GridConfig:
    model: str = "small"
    ratios: list = field(default_factory=lambda: [0.0, 0.4, 0.8])
    magnitudes: list = field(default_factory=lambda: list(range(0, 31, 5)))
    seeds: list = field(default_factory=lambda: [0])
    epochs: int = 8


@dataclass
class PruneConfig:
    model: str = "small"
    ratios: list = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8])
    schedule: str = "decay"  # "decay" or "fixed:M"
    pivots: list = field(default_factory=lambda: [[0.0, 10], [0.4, 5], [0.8, 0]])
    interpolate: bool = False
    epochs_per_stage: int = 4
    seeds: list = field(default_factory=lambda: [0])

    def decay(self) -> DecaySchedule:
        return DecaySchedule(tuple(tuple(p) for p in self.pivots), self.interpolate)


@dataclass
class SchemeConfig:
    kinds: list = field(default_factory=lambda: list(PRUNE_KINDS))
    model: str = "small"
    strong_m: int = 20
    weak_m: int = 0
    ratio: float = 0.8
    extra_blocks: int = 2
    stage1_epochs: int = 8
    stage2_epochs: int = 6
    seeds: list = field(default_factory=lambda: [0, 1, 2])


@dataclass
class DistillConfig:
    kinds: list = field(default_factory=lambda: list(KD_KINDS))
    teacher: str = "teacher"
    student: str = "small"
    teacher_epochs: int = 8
    teacher_m: int = 10
    epochs: int = 8
    fixed_m: int = 5  # Baseline-B magnitude, taken from a grid search
    n: int = 4
    alpha: float = 1.0
    beta: float = 1.0
    tau: float = 4.0  # selection temperature
    kd_alpha: float = 0.5
    kd_tau: float = 4.0
    seeds: list = field(default_factory=lambda: [0])

    def selection(self) -> SelectionConfig:
        return SelectionConfig(self.n, self.alpha, self.beta, self.tau)

    def kd(self) -> KDConfig:
        return KDConfig(self.kd_tau, self.kd_alpha)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    data: DataConfig = field(default_factory=DataConfig)
    models: dict = field(default_factory=_default_models)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    run: list = field(default_factory=lambda: ["grid"])

    def model(self, name: str) -> ModelSpec:
        if name not in self.models:
            raise ConfigError(f"unknown model {name!r}; defined: {sorted(self.models)}")
        d = dict(self.models[name])
        d["blocks"] = [BlockSpec(b) if isinstance(b, int) else BlockSpec(**b) for b in d.get("blocks", [])]
        spec = ModelSpec.from_dict(d)
        spec.validate()
        spec.feature_shapes()
        return spec

    def validate(self) -> "ExperimentConfig":
        for name in self.models:
            self.model(name)
        for s in self.run:
            if s not in SECTIONS:
                raise ConfigError(f"run lists unknown section {s!r}; choose from {SECTIONS}")
        for k in self.scheme.kinds:
            if k not in PRUNE_KINDS + EXTRA_KINDS:
                raise ConfigError(f"scheme.kinds: {k!r} is not an inheritance scheme")
        for k in self.distill.kinds:
            if k not in KD_KINDS:
                raise ConfigError(f"distill.kinds: {k!r} is not a distillation scheme")
        self.distill.selection()
        self.distill.kd()
        if self.prune.schedule == "decay":
            self.prune.decay()
        else:
            parse_fixed(self.prune.schedule)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)


def parse_fixed(schedule: str) -> int:
    from ..augment import check_magnitude

    kind, _, m = schedule.partition(":")
    if kind != "fixed" or not m.strip().lstrip("-").isdigit():
        raise ConfigError(f"schedule must be 'decay' or 'fixed:M', got {schedule!r}")
    return check_magnitude(int(m))


def _merge(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**raw)


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    nested = {"data": DataConfig, "train": TrainConfig, "grid": GridConfig, "prune": PruneConfig,
              "scheme": SchemeConfig, "distill": DistillConfig}
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kw = {k: _merge(c, raw.get(k), k) for k, c in nested.items()}
    if "data" in raw and isinstance(raw["data"], dict) and "synthetic" in raw["data"]:
        syn = _default_synthetic()
        extra = set(raw["data"]["synthetic"] or {}) - set(syn)
        if extra:
            raise ConfigError(f"data.synthetic: unknown keys {sorted(extra)}")
        syn.update(raw["data"]["synthetic"] or {})
        kw["data"].synthetic = syn
    if "models" in raw:
        kw["models"] = dict(raw["models"])
    for k in ("name", "run"):
        if k in raw:
            kw[k] = raw[k]
    try:
        return ExperimentConfig(**kw).validate()
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path=None) -> ExperimentConfig:
    """Read a YAML experiment file; ``None`` gives the built-in defaults."""
    if path is None:
        return ExperimentConfig().validate()
    try:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None
    return from_dict(raw)
