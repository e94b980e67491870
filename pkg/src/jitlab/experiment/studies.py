"""Low-dimensional boundary studies, the CIFAR entropy study and the (eta, sigma) sweep."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from jitlab.data import ForgetSpec, LabeledDataset, load_cifar10, make_blobs, make_logistic1d, make_moons, split_forget
from jitlab.errors import ConfigError
from jitlab.evaluation import accuracy, mia_score, output_entropy, time_method, wilcoxon_signed_rank
from jitlab.experiment.benchmark import (attack_pools, build_datasets, model_spec_for, retain_test_set,
                                         worker_count)
from jitlab.experiment.config import (EntropyConfig, ExperimentConfig, GeometryCase, GeometryConfig,
                                      SigmoidConfig)
from jitlab.experiment.seeds import derive_seed, repeat_seed
from jitlab.models import (Model, ModelSpec, init_model, predict_class_probs, predict_labels, predict_proba,
                           train_sgd)
from jitlab.unlearn import UnlearnConfig, jit_unlearn, naive_mislabel, retrain_oracle

log = logging.getLogger(__name__)

GEOMETRY_MODELS = ("baseline", "retrain", "jit", "naive")


# -- geometry -----------------------------------------------------------------
def grid_points(inputs: np.ndarray, resolution: int, margin: float = 0.1) -> tuple[np.ndarray, tuple]:
    """Row-major G x G lattice over the bounding box of ``inputs`` widened by ``margin`` per side."""
    if inputs.shape[1] != 2:
        raise ConfigError("boundary grids need 2-D inputs")
    lo, hi = inputs.min(axis=0), inputs.max(axis=0)
    pad = margin * (hi - lo)
    lo, hi = lo - pad, hi + pad
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()]), (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def grid_agreement(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of grid cells whose argmax labels coincide."""
    if a.shape != b.shape:
        raise ConfigError("grids differ in shape")
    return float(np.mean(a == b))


@dataclass
class BoundarySnapshot:
    """Per-cell argmax and confidence of each model, for rendering."""

    dataset: str
    seed: int
    role: str
    resolution: int
    bounds: tuple
    labels: dict[str, list[int]]
    confidence: dict[str, list[float]]
    points: list[list[float]]
    point_labels: list[int]
    forget_index: int


@dataclass
class GeometryRecord:
    dataset: str
    repeat: int
    seed: int
    role: str
    forget_index: int
    confidence_before: float
    confidence_after: float
    agreement: dict[str, float]

    @property
    def confidence_drop(self) -> float:
        return self.confidence_before - self.confidence_after


@dataclass
class GeometryResult:
    records: list[GeometryRecord] = field(default_factory=list)
    snapshots: list[BoundarySnapshot] = field(default_factory=list)
    resolution: int = 200

    def select(self, dataset: str, role: str) -> list[GeometryRecord]:
        return [r for r in self.records if r.dataset == dataset and r.role == role]


def _geometry_data(case: GeometryCase, seed: int) -> LabeledDataset:
    if case.dataset == "blobs":
        return make_blobs(case.n_per_class, [[1.0, 1.0], [-1.0, -1.0]], case.std, seed)
    return make_moons(case.n_per_class, case.noise, seed)


def pick_forget_points(model: Model, data: LabeledDataset) -> dict[str, int]:
    """Low-curvature point: highest true-class confidence. Boundary-adjacent: lowest, among correct ones."""
    probs = predict_class_probs(model, data.inputs)
    conf = probs[np.arange(len(data)), data.labels]
    correct = np.flatnonzero(probs.argmax(axis=1) == data.labels)
    if len(correct) == 0:
        raise ConfigError("baseline classifies no training point correctly")
    return {"low_curvature": int(np.argmax(conf)), "boundary": int(correct[np.argmin(conf[correct])])}


def _geometry_cell(cfg: GeometryConfig, case: GeometryCase, repeat: int, base_seed: int, keep: bool):
    seed = repeat_seed(base_seed, repeat)
    data = _geometry_data(case, derive_seed(seed, "data"))
    if data.dim != 2:
        raise ConfigError("geometry study needs a 2-D dataset")
    spec = ModelSpec("mlp", 2, data.n_classes, tuple(cfg.hidden), derive_seed(seed, "init"))
    train_cfg = cfg.train.to_train_config(derive_seed(seed, "shuffle"))
    baseline = init_model(spec)
    train_sgd(baseline, data, train_cfg)
    grid, bounds = grid_points(data.inputs, cfg.grid)
    base_grid = predict_labels(baseline, grid)
    base_probs = predict_class_probs(baseline, data.inputs)
    records, snapshots = [], []
    for role, idx in pick_forget_points(baseline, data).items():
        keep_idx = np.setdiff1d(np.arange(len(data)), [idx])
        retrained = retrain_oracle(spec, data.subset(keep_idx), train_cfg)
        jit = baseline.copy()
        ucfg = UnlearnConfig(case.eta, case.sigma, case.n_perturb, 1, derive_seed(seed, "noise"), case.output)
        jit_unlearn(jit, data.inputs[[idx]], ucfg)
        naive = baseline.copy()
        naive_mislabel(naive, data.subset([idx]), cfg.naive_steps, cfg.naive_lr)
        models = {"baseline": baseline, "retrain": retrained, "jit": jit, "naive": naive}
        grids = {name: (base_grid if name == "baseline" else predict_labels(m, grid)) for name, m in models.items()}
        agreement = {f"{a}~{b}": grid_agreement(grids[a], grids[b])
                     for i, a in enumerate(GEOMETRY_MODELS) for b in GEOMETRY_MODELS[i + 1:]}
        predicted = int(base_probs[idx].argmax())
        records.append(GeometryRecord(case.dataset, repeat, seed, role, idx, float(base_probs[idx, predicted]),
                                      float(predict_class_probs(jit, data.inputs[idx])[predicted]), agreement))
        if keep:
            conf = {n: np.round(predict_class_probs(m, grid).max(axis=1), 6).tolist() for n, m in models.items()}
            snapshots.append(BoundarySnapshot(case.dataset, seed, role, cfg.grid, bounds,
                                              {n: g.astype(int).tolist() for n, g in grids.items()}, conf,
                                              data.inputs.tolist(), data.labels.tolist(), idx))
    return records, snapshots


def run_geometry_study(cfg: GeometryConfig, base_seed: int = 0) -> GeometryResult:
    """Boundary comparison of baseline, retrain, JiT and naive mislabelling on 2-D data.

    For every case and repeat two forget points are studied: the training point
    the baseline is most confident about and the least confident correctly
    classified one. Agreement is measured on a ``grid x grid`` lattice.
    """
    cfg.validate()
    result = GeometryResult(resolution=cfg.grid)
    for case in cfg.cases:
        for r in range(cfg.seeds):
            recs, snaps = _geometry_cell(cfg, case, r, base_seed, r < cfg.keep_snapshots)
            result.records.extend(recs)
            result.snapshots.extend(snaps)
    return result


# -- sigmoid --------------------------------------------------------------------
@dataclass
class SigmoidRecord:
    repeat: int
    seed: int
    role: str
    x: float
    f_before: float
    f_after: float
    max_displacement: float

    @property
    def moved_toward_centre(self) -> bool:
        return abs(self.f_after - 0.5) < abs(self.f_before - 0.5)


@dataclass
class SigmoidResult:
    records: list[SigmoidRecord] = field(default_factory=list)
    curves: list[dict] = field(default_factory=list)

    def select(self, role: str) -> list[SigmoidRecord]:
        return [r for r in self.records if r.role == role]


def pick_sigmoid_points(f: np.ndarray, offset: float) -> dict[str, int]:
    """Boundary-adjacent: |f - 0.5| nearest ``offset``. Saturated: largest |f - 0.5|."""
    dev = np.abs(f - 0.5)
    return {"boundary": int(np.argmin(np.abs(dev - offset))), "saturated": int(np.argmax(dev))}


def run_sigmoid_study(cfg: SigmoidConfig, base_seed: int = 0) -> SigmoidResult:
    """Fit a 1-D sigmoid, unlearn a boundary-adjacent and a saturated point, compare curves."""
    cfg.validate()
    result = SigmoidResult()
    xs = np.linspace(-cfg.half_width, cfg.half_width, cfg.curve_points).reshape(-1, 1)
    for r in range(cfg.seeds):
        seed = repeat_seed(base_seed, r)
        data = make_logistic1d(cfg.n, cfg.half_width, cfg.slope, derive_seed(seed, "data"))
        model = init_model(ModelSpec("sigmoid1d", 1, 2, (), derive_seed(seed, "init")))
        train_sgd(model, data, cfg.train.to_train_config(derive_seed(seed, "shuffle")))
        f = predict_proba(model, data.inputs)
        before = predict_proba(model, xs)
        curve = {"seed": seed, "x": np.round(xs[:, 0], 6).tolist(), "before": np.round(before, 8).tolist()}
        for role, idx in pick_sigmoid_points(f, cfg.boundary_offset).items():
            unlearned = model.copy()
            ucfg = UnlearnConfig(cfg.eta, cfg.sigma, cfg.n_perturb, 1, derive_seed(seed, "noise"))
            jit_unlearn(unlearned, data.inputs[[idx]], ucfg)
            after = predict_proba(unlearned, xs)
            result.records.append(SigmoidRecord(r, seed, role, float(data.inputs[idx, 0]), float(f[idx]),
                                                float(predict_proba(unlearned, data.inputs[idx])),
                                                float(np.abs(after - before).max())))
            curve[role] = np.round(after, 8).tolist()
            curve[f"{role}_x"] = float(data.inputs[idx, 0])
        result.curves.append(curve)
    return result


# -- entropy --------------------------------------------------------------------
@dataclass
class EntropyRecord:
    repeat: int
    seed: int
    entropies: dict[str, list[float]]
    retain_accuracy: dict[str, float]
    forget_accuracy: dict[str, float]
    mia: dict[str, float]
    runtime: dict[str, float]
    wilcoxon_p: float
    wilcoxon_degenerate: bool

    def median(self, method: str) -> float:
        return float(np.median(self.entropies[method]))


@dataclass
class EntropyResult:
    records: list[EntropyRecord] = field(default_factory=list)


ENTROPY_METHODS = ("baseline", "retrain", "jit")


def _entropy_repeat(cfg: EntropyConfig, repeat: int, base_seed: int) -> EntropyRecord:
    seed = repeat_seed(base_seed, repeat)
    path = cfg.cifar_path()
    train = load_cifar10(path, cfg.subsample_per_class, derive_seed(seed, "data"), "train")
    test = load_cifar10(path, cfg.test_per_class, derive_seed(seed, "test"), "test")
    spec = ModelSpec("small_cnn", train.dim, 10, tuple(cfg.channels), derive_seed(seed, "init"), train.image_shape)
    train_cfg = cfg.train.to_train_config(derive_seed(seed, "shuffle"))
    baseline = init_model(spec)
    train_sgd(baseline, train, train_cfg)
    fspec = ForgetSpec.full_class(cfg.forget_class)
    part = split_forget(train, fspec)
    rt_time, retrained = time_method(lambda: retrain_oracle(spec, part.retain, train_cfg))
    jit = baseline.copy()
    ucfg = UnlearnConfig(cfg.eta, cfg.sigma, cfg.n_perturb, 1, derive_seed(seed, "noise"), cfg.output)
    jit_time, _ = time_method(lambda: jit_unlearn(jit, part.forget.inputs, ucfg))
    models = {"baseline": baseline, "retrain": retrained, "jit": jit}
    members, nonmembers = attack_pools(part, test, seed)
    rtest = retain_test_set(test, fspec)
    ent = {k: output_entropy(m, part.forget).tolist() for k, m in models.items()}
    wil = wilcoxon_signed_rank(ent["jit"], ent["retrain"])
    return EntropyRecord(
        repeat, seed, ent,
        {k: 100.0 * accuracy(m, rtest) for k, m in models.items()},
        {k: 100.0 * accuracy(m, part.forget) for k, m in models.items()},
        {k: mia_score(m, part.forget, members, nonmembers, derive_seed(seed, "attack")).score
         for k, m in models.items()},
        {"baseline": 0.0, "retrain": rt_time, "jit": jit_time},
        wil.p_two_sided, wil.degenerate,
    )


def run_entropy_study(cfg: EntropyConfig, base_seed: int = 0) -> EntropyResult:
    """Forget-set output entropies of baseline, retrain and JiT on a CIFAR-10 subsample."""
    cfg.validate()
    return EntropyResult([_entropy_repeat(cfg, r, base_seed) for r in range(cfg.seeds)])


# -- sensitivity sweep ------------------------------------------------------------
@dataclass
class SweepCell:
    eta: float
    sigma: float
    dr_acc: float = math.nan
    df_acc: float = math.nan
    mia: float = math.nan
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error) or not all(math.isfinite(v) for v in (self.dr_acc, self.df_acc, self.mia))


@dataclass
class SweepResult:
    baseline: SweepCell
    cells: list[SweepCell] = field(default_factory=list)
    etas: tuple = ()
    sigmas: tuple = ()

    def cell(self, eta: float, sigma: float) -> SweepCell:
        for c in self.cells:
            if c.eta == eta and c.sigma == sigma:
                return c
        raise KeyError((eta, sigma))


def run_sensitivity_sweep(cfg: ExperimentConfig, seed: int | None = None) -> SweepResult:
    """Full factorial JiT grid over ``cfg.sweep`` on the first forget target, one seeded repeat."""
    sweep = cfg.sweep
    sweep.validate()
    seed = cfg.base_seed if seed is None else seed
    train, test = build_datasets(cfg.dataset, seed)
    spec = model_spec_for(cfg, train, seed)
    baseline = init_model(spec)
    train_sgd(baseline, train, cfg.train.to_train_config(derive_seed(seed, "shuffle")))
    fspec = cfg.forget_specs()[0]
    part = split_forget(train, fspec)
    members, nonmembers = attack_pools(part, test, seed)
    rtest = retain_test_set(test, fspec)

    def measure(model: Model, cell: SweepCell) -> SweepCell:
        cell.dr_acc = 100.0 * accuracy(model, rtest)
        cell.df_acc = 100.0 * accuracy(model, part.forget)
        cell.mia = mia_score(model, part.forget, members, nonmembers, derive_seed(seed, "attack")).score
        return cell

    def run_cell(eta: float, sigma: float) -> SweepCell:
        cell = SweepCell(float(eta), float(sigma))
        try:
            model = baseline.copy()
            ucfg = UnlearnConfig(eta, sigma, sweep.n_perturb, sweep.epochs, derive_seed(seed, "noise"), sweep.output)
            jit_unlearn(model, part.forget.inputs, ucfg)
            measure(model, cell)
        except Exception as exc:  # noqa: BLE001 - failed cells are reported, not raised
            log.warning("sweep cell eta=%g sigma=%g failed: %s", eta, sigma, exc)
            cell.error = f"{type(exc).__name__}: {exc}"
        return cell

    base = measure(baseline, SweepCell(0.0, 0.0))
    pairs = [(e, s) for e in sweep.etas for s in sweep.sigmas]
    workers = worker_count(len(pairs))
    if workers == 1:
        cells = [run_cell(e, s) for e, s in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(lambda p: run_cell(*p), pairs))
    return SweepResult(base, cells, tuple(sweep.etas), tuple(sweep.sigmas))


def to_plain(obj):
    """Dataclass results as JSON-ready dicts."""
    return asdict(obj)
