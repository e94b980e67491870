"""Experiment configuration and its YAML loader.

One YAML document configures everything; each subcommand reads the sections
it needs. Unknown keys anywhere are rejected. The schema is documented in
``configs/SCHEMA.md``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from jitlab.data import ForgetSpec
from jitlab.errors import ConfigError
from jitlab.models import TrainConfig
from jitlab.unlearn import UnlearnConfig

DATASET_KINDS = ("blobs", "moons", "cifar10", "csv")
METHODS = ("baseline", "retrain", "finetune", "amnesiac", "boundary_shrink", "jit")

# allowed parameters per method, with defaults
METHOD_PARAMS: dict[str, dict[str, Any]] = {
    "baseline": {},
    "retrain": {},
    "finetune": {"epochs": 5, "lr": 0.05, "batch_size": 32},
    "amnesiac": {"epochs": 1, "lr": 0.05, "batch_size": 32, "finetune_epochs": 1},
    "boundary_shrink": {"fgsm_eps": 0.05, "steps": 20, "lr": 0.05, "epochs": 1, "batch_size": 32},
    "jit": {"eta": None, "sigma": None, "n_perturb": 32, "epochs": 1, "output": "softmax", "antithetic": False},
}

CIFAR_ENV = "JIT_CIFAR10_DIR"


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _build(cls, raw, where: str):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**{k: _tuplify(v) for k, v in raw.items()})
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"
    n_per_class: int = 100
    test_per_class: int = 50
    means: tuple = ((1.0, 1.0), (-1.0, -1.0))
    std: float = 0.3
    subclass_offsets: tuple | None = None
    noise: float = 0.1
    path: str | None = None
    test_path: str | None = None
    subsample_per_class: int = 500
    test_subsample_per_class: int = 100

    def validate(self) -> None:
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {', '.join(DATASET_KINDS)}")
        if self.kind in ("blobs", "moons") and (self.n_per_class < 1 or self.test_per_class < 1):
            raise ConfigError("dataset sizes must be positive")
        if self.kind == "csv" and (not self.path or not self.test_path):
            raise ConfigError("csv datasets need path and test_path")

    def cifar_path(self) -> str:
        path = self.path or os.environ.get(CIFAR_ENV)
        if not path:
            raise ConfigError(f"no CIFAR-10 location: set dataset.path or {CIFAR_ENV}")
        return path


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "mlp"
    hidden: tuple = (32, 32)


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 200
    learning_rate: float = 0.05
    batch_size: int = 32
    lr_schedule: str = "linear_decay"

    def to_train_config(self, shuffle_seed: int) -> TrainConfig:
        cfg = TrainConfig(self.epochs, self.learning_rate, self.batch_size, shuffle_seed, self.lr_schedule)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.to_train_config(0)


@dataclass(frozen=True)
class MethodConfig:
    name: str
    params: tuple = ()

    @property
    def options(self) -> dict[str, Any]:
        """Declared defaults for the method overlaid with the explicit params."""
        return {**METHOD_PARAMS.get(self.name, {}), **dict(self.params)}

    def validate(self) -> None:
        if self.name not in METHODS:
            raise ConfigError(f"unknown method {self.name!r}; choose from {', '.join(METHODS)}")
        opts = self.options
        if self.name == "jit":
            from jitlab.unlearn import UnlearnConfig  # local: unlearn imports nothing from here
            if opts.get("eta") is None or opts.get("sigma") is None:
                raise ConfigError("method jit needs eta and sigma")
            UnlearnConfig(opts["eta"], opts["sigma"], opts["n_perturb"], opts["epochs"],
                          output=opts["output"], antithetic=opts["antithetic"]).validate()
        for key in ("epochs", "finetune_epochs", "steps"):
            if key in opts and (not isinstance(opts[key], int) or opts[key] < 0):
                raise ConfigError(f"{self.name}.{key} must be a non-negative integer")
        for key in ("lr", "fgsm_eps"):
            if key in opts and not opts[key] > 0:
                raise ConfigError(f"{self.name}.{key} must be positive")

    @classmethod
    def parse(cls, raw, where: str) -> "MethodConfig":
        if isinstance(raw, str):
            raw = {"name": raw}
        if not isinstance(raw, dict) or "name" not in raw:
            raise ConfigError(f"{where}: a method is a name or a mapping with a name")
        name = raw["name"]
        if name not in METHOD_PARAMS:
            raise ConfigError(f"{where}: unknown method {name!r}")
        allowed = METHOD_PARAMS[name]
        unknown = sorted(set(raw) - set(allowed) - {"name"})
        if unknown:
            raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)} for method {name}")
        merged = {**allowed, **{k: v for k, v in raw.items() if k != "name"}}
        return cls(name, tuple(sorted(merged.items())))

    def with_overrides(self, **overrides) -> "MethodConfig":
        opts = self.options
        opts.update({k: v for k, v in overrides.items() if v is not None})
        return MethodConfig(self.name, tuple(sorted(opts.items())))

    def label(self) -> str:
        return self.name


@dataclass(frozen=True)
class GeometryCase:
    dataset: str = "blobs"
    output: str = "softmax"
    eta: float = 0.01
    sigma: float = 0.2
    n_perturb: int = 32
    n_per_class: int = 100
    std: float = 0.3
    noise: float = 0.1


@dataclass(frozen=True)
class GeometryConfig:
    seeds: int = 10
    grid: int = 200
    hidden: tuple = (32, 32)
    train: TrainSection = field(default_factory=TrainSection)
    naive_steps: int = 200
    naive_lr: float = 0.5
    keep_snapshots: int = 1
    cases: tuple = (
        GeometryCase("blobs", "logits", 0.03, 0.2),
        GeometryCase("moons", "softmax", 0.01, 1.0),
    )

    def validate(self) -> None:
        if self.seeds < 1 or self.grid < 2:
            raise ConfigError("geometry needs seeds >= 1 and grid >= 2")
        for case in self.cases:
            if case.dataset not in ("blobs", "moons"):
                raise ConfigError(f"geometry dataset must be blobs or moons, got {case.dataset!r}")
        self.train.validate()


@dataclass(frozen=True)
class SigmoidConfig:
    seeds: int = 10
    n: int = 200
    half_width: float = 8.0
    slope: float = 0.8
    train: TrainSection = field(default_factory=TrainSection)
    eta: float = 0.1
    sigma: float = 0.5
    n_perturb: int = 32
    boundary_offset: float = 0.1
    curve_points: int = 401

    def validate(self) -> None:
        if self.seeds < 1 or self.curve_points < 2:
            raise ConfigError("sigmoid study needs seeds >= 1 and curve_points >= 2")
        if not 0 <= self.boundary_offset < 0.5:
            raise ConfigError("boundary_offset must lie in [0, 0.5)")
        self.train.validate()


@dataclass(frozen=True)
class EntropyConfig:
    path: str | None = None
    seeds: int = 10
    subsample_per_class: int = 500
    test_per_class: int = 100
    channels: tuple = (8, 16)
    train: TrainSection = field(default_factory=lambda: TrainSection(8, 0.05, 32, "linear_decay"))
    forget_class: int = 0
    eta: float = 0.0007
    sigma: float = 0.5
    n_perturb: int = 16
    output: str = "logits"

    def validate(self) -> None:
        if self.seeds < 1 or self.subsample_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("entropy study needs positive seeds and subsample sizes")
        if not 0 <= self.forget_class < 10:
            raise ConfigError("entropy.forget_class must be a CIFAR-10 class in 0..9")
        if len(self.channels) != 2:
            raise ConfigError("entropy.channels takes two conv channel counts")
        self.train.validate()
        UnlearnConfig(self.eta, self.sigma, self.n_perturb, output=self.output).validate()

    def cifar_path(self) -> str:
        path = self.path or os.environ.get(CIFAR_ENV)
        if not path:
            raise ConfigError(f"no CIFAR-10 location: set entropy.path or {CIFAR_ENV}")
        return path


@dataclass(frozen=True)
class SweepConfig:
    etas: tuple = (1e-4, 4e-4, 1.6e-3, 6.4e-3, 2.56e-2, 1.024e-1)
    sigmas: tuple = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
    n_perturb: int = 32
    epochs: int = 1
    output: str = "logits"

    def validate(self) -> None:
        if not self.etas or not self.sigmas:
            raise ConfigError("sweep grids must be nonempty")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    forget: tuple = ("full_class:0",)
    methods: tuple = (MethodConfig("baseline"), MethodConfig("retrain"))
    repeats: int = 10
    base_seed: int = 0
    output_dir: str = "results"
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    sigmoid: SigmoidConfig = field(default_factory=SigmoidConfig)
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self) -> None:
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.forget:
            raise ConfigError("at least one forget target is required")
        for target in self.forget:
            ForgetSpec.parse(target)
        self.dataset.validate()
        self.train.validate()
        for m in self.methods:
            m.validate()
        labels = [m.label() for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"method labels must be unique, got {labels}")
        self.geometry.validate()
        self.sigmoid.validate()
        self.entropy.validate()
        self.sweep.validate()

    def forget_specs(self) -> list[ForgetSpec]:
        return [ForgetSpec.parse(t) for t in self.forget]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "train": TrainSection,
    "sigmoid": SigmoidConfig,
    "entropy": EntropyConfig,
    "sweep": SweepConfig,
}


def _parse_geometry(raw) -> GeometryConfig:
    raw = dict(raw or {})
    train = _build(TrainSection, raw.pop("train", None), "geometry.train")
    cases = raw.pop("cases", None)
    cfg = _build(GeometryConfig, raw, "geometry")
    changes: dict[str, Any] = {"train": train}
    if cases is not None:
        if not isinstance(cases, list) or not cases:
            raise ConfigError("geometry.cases must be a nonempty list")
        changes["cases"] = tuple(_build(GeometryCase, c, f"geometry.cases[{i}]") for i, c in enumerate(cases))
    return dataclasses.replace(cfg, **changes)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key in ("sigmoid", "entropy") and isinstance(value, dict) and "train" in value:
            value = dict(value)
            train = _build(TrainSection, value.pop("train"), f"{key}.train")
            kwargs[key] = dataclasses.replace(_build(_SECTIONS[key], value, key), train=train)
        elif key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key == "geometry":
            kwargs[key] = _parse_geometry(value)
        elif key == "methods":
            if not isinstance(value, list):
                raise ConfigError("methods must be a list")
            kwargs[key] = tuple(MethodConfig.parse(m, f"methods[{i}]") for i, m in enumerate(value))
        elif key == "forget":
            kwargs[key] = (value,) if isinstance(value, str) else tuple(str(v) for v in value)
        else:
            kwargs[key] = value
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return config_from_dict(raw)
