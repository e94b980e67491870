"""Seeded benchmark: train a baseline per repeat, run every method on a copy, aggregate."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from jitlab.data import (ForgetPartition, ForgetSpec, LabeledDataset, from_csv, load_cifar10,
                         make_blobs, make_moons, split_forget)
from jitlab.errors import ConfigError, ContractError
from jitlab.evaluation import accuracy, mia_score, time_method
from jitlab.experiment.config import DatasetConfig, ExperimentConfig, MethodConfig
from jitlab.experiment.seeds import derive_seed, repeat_seed
from jitlab.models import Model, ModelSpec, TrainConfig, init_model, train_sgd
from jitlab.unlearn import (UnlearnConfig, amnesiac_baseline, boundary_shrink_baseline,
                            finetune_baseline, jit_unlearn, retrain_oracle)

log = logging.getLogger(__name__)

THREADS_ENV = "JIT_THREADS"


def worker_count(jobs: int) -> int:
    """Workers for ``jobs`` independent cells, capped by JIT_THREADS (default: cores)."""
    raw = os.environ.get(THREADS_ENV)
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(cap, jobs))


def build_datasets(cfg: DatasetConfig, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """(train, test) for one repeat; synthetic sets draw from the data/test seed streams."""
    cfg.validate()
    data_seed, test_seed = derive_seed(seed, "data"), derive_seed(seed, "test")
    if cfg.kind == "blobs":
        return (make_blobs(cfg.n_per_class, cfg.means, cfg.std, data_seed, cfg.subclass_offsets),
                make_blobs(cfg.test_per_class, cfg.means, cfg.std, test_seed, cfg.subclass_offsets))
    if cfg.kind == "moons":
        return make_moons(cfg.n_per_class, cfg.noise, data_seed), make_moons(cfg.test_per_class, cfg.noise, test_seed)
    if cfg.kind == "cifar10":
        path = cfg.cifar_path()
        return (load_cifar10(path, cfg.subsample_per_class, data_seed, "train"),
                load_cifar10(path, cfg.test_subsample_per_class, test_seed, "test"))
    train = from_csv(cfg.path)
    test = from_csv(cfg.test_path)
    k = max(train.n_classes, test.n_classes)
    train.n_classes = test.n_classes = k
    return train, test


def model_spec_for(cfg: ExperimentConfig, train: LabeledDataset, seed: int) -> ModelSpec:
    spec = ModelSpec(cfg.model.arch, train.dim, train.n_classes, tuple(cfg.model.hidden),
                     derive_seed(seed, "init"), train.image_shape)
    spec.validate()
    return spec


def retain_test_set(test: LabeledDataset, spec: ForgetSpec) -> LabeledDataset:
    """Test samples from the classes that remain: drop the forgotten class or subclass."""
    if spec.kind == "full_class":
        keep = test.labels != spec.target
    elif spec.kind == "sub_class" and test.subclasses is not None:
        keep = test.subclasses != spec.target
    else:
        keep = np.ones(len(test), dtype=bool)
    return test.subset(np.flatnonzero(keep), f"{test.name}-retain")


def attack_pools(part: ForgetPartition, test: LabeledDataset, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Members: a seeded slice of D_r as large as the test set. Non-members: the test set."""
    n = min(len(part.retain), len(test))
    rng = np.random.default_rng(derive_seed(seed, "member"))
    idx = np.sort(rng.choice(len(part.retain), size=n, replace=False))
    return part.retain.subset(idx, "members"), test


def run_method(method: MethodConfig, baseline: Model, part: ForgetPartition, spec: ModelSpec,
               train_cfg: TrainConfig, seed: int) -> Model:
    """Apply one method to a fresh copy of ``baseline`` (retrain starts from scratch)."""
    o = method.options
    if method.name == "baseline":
        return baseline.copy()
    if method.name == "retrain":
        return retrain_oracle(spec, part.retain, train_cfg)
    model = baseline.copy()
    if method.name == "finetune":
        finetune_baseline(model, part.retain, o["epochs"], o["lr"], o["batch_size"], derive_seed(seed, "shuffle"))
    elif method.name == "amnesiac":
        amnesiac_baseline(model, part.forget, part.retain, derive_seed(seed, "mislabel"), o["epochs"], o["lr"],
                          o["batch_size"], o["finetune_epochs"])
    elif method.name == "boundary_shrink":
        boundary_shrink_baseline(model, part.forget, o["fgsm_eps"], o["steps"], o["lr"], o["epochs"],
                                 o["batch_size"], derive_seed(seed, "shuffle"))
    elif method.name == "jit":
        ucfg = UnlearnConfig(o["eta"], o["sigma"], o["n_perturb"], o["epochs"], derive_seed(seed, "noise"),
                             o["output"], o["antithetic"])
        jit_unlearn(model, part.forget.inputs, ucfg)
    else:
        raise ConfigError(f"unknown method {method.name!r}")
    return model


@dataclass
class CellResult:
    """Metrics of one (method, forget target, repeat); accuracies and MIA in percent."""

    method: str
    forget_target: str
    repeat: int
    seed: int
    dr_acc: float = math.nan
    df_acc: float = math.nan
    mia: float = math.nan
    runtime_s: float = math.nan
    mia_degenerate: bool = False
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class ResultRow:
    method: str
    forget_target: str
    seeds: list[int]
    dr_acc: tuple[float, float]
    df_acc: tuple[float, float]
    mia: tuple[float, float]
    runtime: tuple[float, float]

    @property
    def seed_count(self) -> int:
        return len(self.seeds)


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    cells: list[CellResult] = field(default_factory=list)

    def row(self, method: str, forget_target: str | None = None) -> ResultRow:
        for r in self.rows:
            if r.method == method and (forget_target is None or r.forget_target == forget_target):
                return r
        raise KeyError(method)

    @property
    def errors(self) -> list[CellResult]:
        return [c for c in self.cells if not c.ok]


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate(cells: list[CellResult], methods: list[str], targets: list[str]) -> list[ResultRow]:
    rows = []
    for target in targets:
        for method in methods:
            good = [c for c in cells if c.method == method and c.forget_target == target and c.ok]
            rows.append(ResultRow(
                method, target, [c.seed for c in good],
                _mean_std([c.dr_acc for c in good]), _mean_std([c.df_acc for c in good]),
                _mean_std([c.mia for c in good]), _mean_std([c.runtime_s for c in good]),
            ))
    return rows


def _evaluate_cell(cell: CellResult, model: Model, part: ForgetPartition, test: LabeledDataset,
                   spec: ForgetSpec, seed: int) -> None:
    members, nonmembers = attack_pools(part, test, seed)
    rtest = retain_test_set(test, spec)
    cell.dr_acc = 100.0 * accuracy(model, rtest) if len(rtest) else math.nan
    cell.df_acc = 100.0 * accuracy(model, part.forget) if len(part.forget) else math.nan
    mia = mia_score(model, part.forget, members, nonmembers, derive_seed(seed, "attack"))
    cell.mia = mia.score
    cell.mia_degenerate = mia.degenerate


def run_repeat(cfg: ExperimentConfig, repeat: int) -> list[CellResult]:
    """Every (forget target, method) cell for one repeat; failures become error cells."""
    seed = repeat_seed(cfg.base_seed, repeat)
    train, test = build_datasets(cfg.dataset, seed)
    spec = model_spec_for(cfg, train, seed)
    train_cfg = cfg.train.to_train_config(derive_seed(seed, "shuffle"))
    baseline = init_model(spec)
    train_sgd(baseline, train, train_cfg)
    checkpoint = baseline.fingerprint()
    cells = []
    for fspec in cfg.forget_specs():
        target = fspec.describe()
        part = split_forget(train, fspec)
        for method in cfg.methods:
            cell = CellResult(method.label(), target, repeat, seed)
            try:
                runtime, model = time_method(lambda: run_method(method, baseline, part, spec, train_cfg, seed))
                if baseline.fingerprint() != checkpoint:
                    raise ContractError(f"method {method.name} mutated the baseline checkpoint")
                cell.runtime_s = runtime
                _evaluate_cell(cell, model, part, test, fspec, seed)
            except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the run
                log.warning("repeat %d, %s on %s failed: %s", repeat, method.name, target, exc)
                cell.error = f"{type(exc).__name__}: {exc}"
                if isinstance(exc, ContractError):
                    raise
            cells.append(cell)
    return cells


def run_benchmark(cfg: ExperimentConfig) -> ResultTable:
    """Run ``cfg.repeats`` seeded repeats (repeat r uses base_seed + r) and aggregate mean and std."""
    cfg.validate()
    repeats = range(cfg.repeats)
    workers = worker_count(cfg.repeats)
    if workers == 1:
        per_repeat = [run_repeat(cfg, r) for r in repeats]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_repeat = list(pool.map(lambda r: run_repeat(cfg, r), repeats))
    cells = [c for group in per_repeat for c in group]
    methods = [m.label() for m in cfg.methods]
    targets = [s.describe() for s in cfg.forget_specs()]
    return ResultTable(aggregate(cells, methods, targets), cells)
