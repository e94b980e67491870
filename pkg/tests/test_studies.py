import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest

from jitlab.errors import ConfigError
from jitlab.experiment.config import (EntropyConfig, GeometryCase, GeometryConfig, SigmoidConfig, TrainSection,
                                      load_config)
from jitlab.experiment.studies import (grid_agreement, grid_points, pick_sigmoid_points, run_entropy_study,
                                       run_geometry_study, run_sensitivity_sweep, run_sigmoid_study)
from jitlab.evaluation import wilcoxon_signed_rank
from jitlab.models import ModelSpec, init_model, predict_proba
from jitlab.unlearn import UnlearnConfig, jit_unlearn

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class TestGrid:
    def test_shape_and_margin(self):
        pts, bounds = grid_points(np.array([[0.0, 0.0], [10.0, 20.0]]), 5)
        assert pts.shape == (25, 2)
        assert bounds == (-1.0, 11.0, -2.0, 22.0)

    def test_three_dimensional_input(self):
        with pytest.raises(ConfigError):
            grid_points(np.zeros((4, 3)), 5)

    def test_self_agreement(self):
        labels = np.random.default_rng(0).integers(0, 3, 400)
        assert grid_agreement(labels, labels) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            grid_agreement(np.zeros(4), np.zeros(5))


def test_geometry_structure():
    cfg = GeometryConfig(seeds=1, grid=20, train=TrainSection(30, 0.05, 32, "linear_decay"), naive_steps=20)
    result = run_geometry_study(cfg, base_seed=3)
    assert len(result.records) == 4
    assert {(r.dataset, r.role) for r in result.records} == {
        ("blobs", "low_curvature"), ("blobs", "boundary"), ("moons", "low_curvature"), ("moons", "boundary")}
    for rec in result.records:
        assert set(rec.agreement) >= {"baseline~retrain", "baseline~jit", "retrain~jit", "retrain~naive"}
        assert all(0.0 <= v <= 1.0 for v in rec.agreement.values())
    snap = result.snapshots[0]
    assert len(snap.labels["baseline"]) == 400


def test_geometry_rejects_unknown_dataset():
    cfg = GeometryConfig(cases=(GeometryCase("spirals", "softmax", 0.1, 0.1),))
    with pytest.raises(ConfigError):
        run_geometry_study(cfg)


class TestSigmoid:
    def test_exact_boundary_point_stays(self):
        model = init_model(ModelSpec("sigmoid1d", 1, 2, ()))
        model.params["w"].data[...] = 1.3
        model.params["b"].data[...] = 0.0
        before = float(predict_proba(model, [0.0]))
        jit_unlearn(model, np.zeros((1, 1)), UnlearnConfig(0.1, 0.5, 32, antithetic=True))
        after = float(predict_proba(model, [0.0]))
        assert before == 0.5
        assert abs(after - 0.5) <= abs(before - 0.5)

    def test_point_selection(self):
        f = np.array([0.5, 0.62, 0.999, 0.1, 0.41])
        assert pick_sigmoid_points(f, 0.1) == {"boundary": 4, "saturated": 2}

    def test_study_records(self):
        result = run_sigmoid_study(SigmoidConfig(seeds=2, curve_points=41), base_seed=0)
        assert len(result.records) == 4 and len(result.curves) == 2
        assert len(result.curves[0]["before"]) == 41
        for rec in result.select("boundary"):
            assert rec.moved_toward_centre
        sat = {r.seed: r.max_displacement for r in result.select("saturated")}
        for rec in result.select("boundary"):
            assert sat[rec.seed] < rec.max_displacement


class TestEntropy:
    def test_missing_location(self, monkeypatch):
        monkeypatch.delenv("JIT_CIFAR10_DIR", raising=False)
        with pytest.raises(ConfigError):
            run_entropy_study(EntropyConfig(seeds=1))

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            run_entropy_study(EntropyConfig(forget_class=10))

    def test_pipeline_on_synthetic_images(self, tiny_cifar):
        cfg = EntropyConfig(path=str(tiny_cifar), seeds=2, subsample_per_class=20, test_per_class=10,
                            channels=(2, 4), train=TrainSection(2, 0.05, 32, "linear_decay"))
        result = run_entropy_study(cfg)
        assert len(result.records) == 2
        for rec in result.records:
            assert set(rec.entropies) == {"baseline", "retrain", "jit"}
            for values in rec.entropies.values():
                assert len(values) == 20
                assert all(0.0 <= h <= math.log(10) for h in values)
            assert 0.0 <= rec.wilcoxon_p <= 1.0
            assert rec.runtime["retrain"] > 0 and rec.runtime["jit"] > 0
        jit = result.records[0].entropies["jit"]
        assert wilcoxon_signed_rank(jit, jit).p_two_sided == 1.0


def _non_increasing_beyond_best(values):
    best = int(np.argmax(values))
    tail = values[best:]
    return all(b <= a for a, b in zip(tail, tail[1:]))


@pytest.fixture(scope="module")
def bench_sweep():
    return run_sensitivity_sweep(load_config(CONFIGS / "blobs_bench.yaml"))


class TestSweep:
    def test_full_factorial(self, bench_sweep):
        assert len(bench_sweep.cells) == 36
        assert {(c.eta, c.sigma) for c in bench_sweep.cells} == {
            (e, s) for e in bench_sweep.etas for s in bench_sweep.sigmas}
        assert not any(c.failed for c in bench_sweep.cells)

    def test_smallest_eta_matches_baseline(self, bench_sweep):
        base = bench_sweep.baseline
        for sigma in bench_sweep.sigmas:
            cell = bench_sweep.cell(min(bench_sweep.etas), sigma)
            assert abs(cell.dr_acc - base.dr_acc) <= 1.0
            assert abs(cell.df_acc - base.df_acc) <= 1.0
            assert abs(cell.mia - base.mia) <= 1.0

    def test_retain_accuracy_non_increasing_in_eta(self, bench_sweep):
        rows = [[bench_sweep.cell(e, s).dr_acc for e in bench_sweep.etas] for s in bench_sweep.sigmas]
        assert sum(_non_increasing_beyond_best(r) for r in rows) >= 0.8 * len(rows)

    def test_small_grid(self):
        cfg = load_config(CONFIGS / "blobs_bench.yaml")
        cfg = cfg.replace(train=TrainSection(20, 0.05, 32, "linear_decay"),
                          sweep=dataclasses.replace(cfg.sweep, etas=(0.01, 0.1), sigmas=(0.5,)))
        result = run_sensitivity_sweep(cfg, seed=4)
        assert len(result.cells) == 2
