import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from jitlab.experiment.benchmark import run_benchmark
from jitlab.experiment.config import GeometryConfig, SigmoidConfig, TrainSection, config_from_dict
from jitlab.experiment.reports import (RESULT_COLUMNS, fmt, load_entropy, load_geometry, load_sigmoid, load_sweep,
                                       load_table, render_reports, save_json, strip_runtime)
from jitlab.experiment.studies import (EntropyRecord, EntropyResult, SweepCell, SweepResult, run_geometry_study,
                                       run_sigmoid_study)

RAW = {
    "dataset": {"kind": "blobs", "n_per_class": 20, "test_per_class": 10},
    "model": {"hidden": [6]},
    "train": {"epochs": 10},
    "forget": ["full_class:0", "random:5:2"],
    "methods": ["baseline", "retrain", {"name": "jit", "eta": 0.05, "sigma": 0.5, "n_perturb": 4}],
    "repeats": 2,
}


@pytest.fixture(scope="module")
def results():
    table = run_benchmark(config_from_dict(RAW))
    geometry = run_geometry_study(GeometryConfig(seeds=1, grid=12, train=TrainSection(20), naive_steps=5))
    sigmoid = run_sigmoid_study(SigmoidConfig(seeds=1, curve_points=21))
    rng = np.random.default_rng(0)
    entropy = EntropyResult([EntropyRecord(
        0, 0, {k: rng.uniform(0, math.log(10), 30).tolist() for k in ("baseline", "retrain", "jit")},
        {"baseline": 60.0, "retrain": 58.0, "jit": 59.0}, {"baseline": 90.0, "retrain": 0.0, "jit": 40.0},
        {"baseline": 80.0, "retrain": 1.0, "jit": 20.0}, {"baseline": 0.0, "retrain": 2.0, "jit": 0.1}, 0.4, False)])
    sweep = SweepResult(SweepCell(0.0, 0.0, 100.0, 100.0, 90.0),
                        [SweepCell(0.1, 0.5, 99.0, 10.0, 5.0), SweepCell(0.2, 0.5, error="ValueError: x")],
                        (0.1, 0.2), (0.5,))
    return {"table": table, "geometry": geometry, "sigmoid": sigmoid, "entropy": entropy, "sweep": sweep}


def test_fmt():
    assert fmt(0.1) == "0.1" and fmt(float("nan")) == "nan" and fmt(True) == "1" and fmt("a") == "a"


def test_result_csv_schema(results, tmp_path):
    render_reports(tmp_path, table=results["table"])
    rows = list(csv.reader((tmp_path / "results.csv").open()))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert len(rows) == 3 * 2 + 1
    assert {r[1] for r in rows[1:]} == {"full_class:0", "random:5:2"}
    assert all(r[2] == "2" for r in rows[1:])


def test_all_artefacts_written(results, tmp_path):
    written = render_reports(tmp_path, **results)
    names = {p.name for p in written}
    assert {"results.csv", "cells.csv", "geometry.csv", "entropy.csv", "entropy_hist.svg", "sigmoid.csv",
            "sigmoid.svg", "sweep.csv"} <= names
    assert any(n.startswith("boundary_") for n in names)


def test_svgs_are_well_formed(results, tmp_path):
    for path in render_reports(tmp_path, **results):
        if path.suffix == ".svg":
            root = ET.parse(path).getroot()
            assert root.tag == "{http://www.w3.org/2000/svg}svg"
            assert "href" not in path.read_text()


def test_entropy_histogram_has_three_series(results, tmp_path):
    render_reports(tmp_path, entropy=results["entropy"])
    root = ET.parse(tmp_path / "entropy_hist.svg").getroot()
    assert len(root.findall(".//{http://www.w3.org/2000/svg}polyline")) == 3


def test_byte_identical_rerender(results, tmp_path):
    a = render_reports(tmp_path / "a", **results)
    b = render_reports(tmp_path / "b", **results)
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_sweep_csv(results, tmp_path):
    render_reports(tmp_path, sweep=results["sweep"])
    rows = list(csv.reader((tmp_path / "sweep.csv").open()))
    assert rows[1][:2] == ["baseline", "baseline"]
    assert len(rows) == 1 + 1 + 2
    assert rows[3][5] == "1"


def test_strip_runtime():
    text = "method,x,runtime_mean_s,runtime_std_s\njit,1,0.5,0.1\n"
    assert strip_runtime(text) == "method,x\njit,1\n"


def test_unwritable_directory(results, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        render_reports(blocker / "out", table=results["table"])


def test_json_round_trips(results, tmp_path):
    save_json(results["table"], tmp_path / "t.json")
    table = load_table(tmp_path / "t.json")
    assert table.rows[0].dr_acc == results["table"].rows[0].dr_acc
    assert len(table.cells) == len(results["table"].cells)
    save_json(results["geometry"], tmp_path / "g.json")
    geo = load_geometry(tmp_path / "g.json")
    assert geo.records[0].agreement == results["geometry"].records[0].agreement
    save_json(results["sigmoid"], tmp_path / "s.json")
    assert load_sigmoid(tmp_path / "s.json").records == results["sigmoid"].records
    save_json(results["entropy"], tmp_path / "e.json")
    assert load_entropy(tmp_path / "e.json").records[0].entropies == results["entropy"].records[0].entropies
    save_json(results["sweep"], tmp_path / "w.json")
    sweep = load_sweep(tmp_path / "w.json")
    assert sweep.cell(0.1, 0.5) == results["sweep"].cell(0.1, 0.5)
    # re-rendering from loaded JSON reproduces the same bytes
    a = render_reports(tmp_path / "a", table=results["table"], geometry=results["geometry"])
    b = render_reports(tmp_path / "b", table=table, geometry=geo)
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
