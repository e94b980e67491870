"""Result persistence (CSV, JSON) and byte-deterministic SVG figures."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from jitlab.experiment.benchmark import CellResult, ResultRow, ResultTable
from jitlab.experiment.studies import (BoundarySnapshot, EntropyRecord, EntropyResult, GeometryRecord,
                                       GeometryResult, SigmoidRecord, SigmoidResult, SweepCell, SweepResult)

RESULT_COLUMNS = ("method", "forget_target", "seed_count", "dr_acc_mean", "dr_acc_std", "df_acc_mean",
                  "df_acc_std", "mia_mean", "mia_std", "runtime_mean_s", "runtime_std_s")
RUNTIME_COLUMNS = ("runtime_mean_s", "runtime_std_s")
CELL_COLUMNS = ("method", "forget_target", "repeat", "seed", "dr_acc", "df_acc", "mia", "runtime_s",
                "mia_degenerate", "error")
SWEEP_COLUMNS = ("eta", "sigma", "dr_acc", "df_acc", "mia", "failed", "error")

PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb", "#000000",
           "#ee8866", "#99ddff")


def fmt(v) -> str:
    """Shortest round-trip text for floats; 'nan' for missing values."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def result_rows(table: ResultTable):
    for r in table.rows:
        yield (r.method, r.forget_target, r.seed_count, *r.dr_acc, *r.df_acc, *r.mia, *r.runtime)


def write_result_csv(table: ResultTable, path) -> Path:
    return _write_csv(Path(path), RESULT_COLUMNS, result_rows(table))


def write_cells_csv(table: ResultTable, path) -> Path:
    rows = ((c.method, c.forget_target, c.repeat, c.seed, c.dr_acc, c.df_acc, c.mia, c.runtime_s,
             c.mia_degenerate, c.error) for c in table.cells)
    return _write_csv(Path(path), CELL_COLUMNS, rows)


def write_sweep_csv(sweep: SweepResult, path) -> Path:
    rows = [("baseline", "baseline", sweep.baseline.dr_acc, sweep.baseline.df_acc, sweep.baseline.mia, False, "")]
    rows += [(c.eta, c.sigma, c.dr_acc, c.df_acc, c.mia, c.failed, c.error) for c in sweep.cells]
    return _write_csv(Path(path), SWEEP_COLUMNS, rows)


def strip_runtime(csv_text: str) -> str:
    """The CSV with runtime columns removed, for determinism comparisons."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    keep = [i for i, name in enumerate(rows[0]) if name not in RUNTIME_COLUMNS]
    return "\n".join(",".join(r[i] for i in keep) for r in rows) + "\n"


# -- JSON persistence ---------------------------------------------------------------
def save_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(asdict(obj), sort_keys=True, allow_nan=True, separators=(",", ":")))
    return path


def load_table(path) -> ResultTable:
    raw = json.loads(Path(path).read_text())
    return ResultTable([ResultRow(**{k: (tuple(v) if isinstance(v, list) and k != "seeds" else v)
                                     for k, v in r.items()}) for r in raw["rows"]],
                       [CellResult(**c) for c in raw["cells"]])


def load_geometry(path) -> GeometryResult:
    raw = json.loads(Path(path).read_text())
    snaps = [BoundarySnapshot(**{**s, "bounds": tuple(s["bounds"])}) for s in raw["snapshots"]]
    return GeometryResult([GeometryRecord(**r) for r in raw["records"]], snaps, raw["resolution"])


def load_sigmoid(path) -> SigmoidResult:
    raw = json.loads(Path(path).read_text())
    return SigmoidResult([SigmoidRecord(**r) for r in raw["records"]], raw["curves"])


def load_entropy(path) -> EntropyResult:
    raw = json.loads(Path(path).read_text())
    return EntropyResult([EntropyRecord(**r) for r in raw["records"]])


def load_sweep(path) -> SweepResult:
    raw = json.loads(Path(path).read_text())
    return SweepResult(SweepCell(**raw["baseline"]), [SweepCell(**c) for c in raw["cells"]],
                       tuple(raw["etas"]), tuple(raw["sigmas"]))


# -- SVG ------------------------------------------------------------------------------
def _n(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if math.isfinite(v) else "0"


class Svg:
    """Minimal SVG 1.1 writer; output depends only on the calls made."""

    def __init__(self, width: float, height: float):
        self.width, self.height = width, height
        self.parts: list[str] = []

    def rect(self, x, y, w, h, fill, opacity=None, stroke=None):
        extra = f' fill-opacity="{_n(opacity)}"' if opacity is not None else ""
        extra += f' stroke="{stroke}" fill="none"' if stroke else f' fill="{fill}"'
        self.parts.append(f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(w)}" height="{_n(h)}"{extra}/>')

    def circle(self, cx, cy, r, fill, stroke="none", width=1.0):
        self.parts.append(f'<circle cx="{_n(cx)}" cy="{_n(cy)}" r="{_n(r)}" fill="{fill}" stroke="{stroke}" '
                          f'stroke-width="{_n(width)}"/>')

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" stroke="{stroke}" '
                          f'stroke-width="{_n(width)}"{d}/>')

    def polyline(self, pts, stroke, width=1.5, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        coords = " ".join(f"{_n(x)},{_n(y)}" for x, y in pts)
        self.parts.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{_n(width)}"{d}/>')

    def text(self, x, y, s, size=12, anchor="start"):
        self.parts.append(f'<text x="{_n(x)}" y="{_n(y)}" font-family="sans-serif" font-size="{size}" '
                          f'text-anchor="{anchor}">{escape(str(s))}</text>')

    def render(self) -> str:
        head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_n(self.width)}" '
                f'height="{_n(self.height)}" viewBox="0 0 {_n(self.width)} {_n(self.height)}">\n')
        return head + "\n".join(self.parts) + "\n</svg>\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.render())
        return path


def boundary_svg(snap: BoundarySnapshot, panel: int = 240) -> Svg:
    """Four panels (baseline, retrain, JiT, naive): argmax regions, data and the forget point."""
    names = ("baseline", "retrain", "jit", "naive")
    g = snap.resolution
    cell = panel / g
    svg = Svg(4 * panel + 50, panel + 40)
    x0, x1, y0, y1 = snap.bounds
    pts = np.asarray(snap.points)
    for k, name in enumerate(names):
        ox = 10 + k * (panel + 10)
        oy = 25
        svg.text(ox + panel / 2, 16, name, anchor="middle")
        lab = np.asarray(snap.labels[name]).reshape(g, g)
        for row in range(g):
            # run-length encode each grid row so the file stays small
            y = oy + (g - 1 - row) * cell
            start = 0
            for col in range(1, g + 1):
                if col == g or lab[row, col] != lab[row, start]:
                    svg.rect(ox + start * cell, y, (col - start) * cell, cell,
                             PALETTE[int(lab[row, start]) % len(PALETTE)], opacity=0.35)
                    start = col
        for (px, py), c in zip(pts, snap.point_labels):
            sx = ox + (px - x0) / (x1 - x0) * panel
            sy = oy + panel - (py - y0) / (y1 - y0) * panel
            svg.circle(sx, sy, 1.8, PALETTE[int(c) % len(PALETTE)])
        fx, fy = pts[snap.forget_index]
        svg.circle(ox + (fx - x0) / (x1 - x0) * panel, oy + panel - (fy - y0) / (y1 - y0) * panel,
                   5, "none", stroke="#000000", width=2)
        svg.rect(ox, oy, panel, panel, "none", stroke="#000000")
    return svg


def entropy_histogram_svg(record: EntropyRecord, bins: int = 30, n_classes: int = 10) -> Svg:
    """Overlaid step histograms of forget-set entropy for baseline, retrain and JiT."""
    w, h, pad = 520, 320, 40
    svg = Svg(w, h)
    edges = np.linspace(0.0, math.log(n_classes), bins + 1)
    series = [(k, np.histogram(record.entropies[k], bins=edges)[0]) for k in ("baseline", "retrain", "jit")]
    top = max(1, max(int(c.max()) for _, c in series))
    svg.line(pad, h - pad, w - 10, h - pad)
    svg.line(pad, h - pad, pad, 10)
    for i, (name, counts) in enumerate(series):
        pts = []
        for b, c in enumerate(counts):
            xa = pad + (w - pad - 10) * b / bins
            xb = pad + (w - pad - 10) * (b + 1) / bins
            y = h - pad - (h - pad - 10) * c / top
            pts += [(xa, y), (xb, y)]
        svg.polyline(pts, PALETTE[i], 2.0)
        svg.text(w - 120, 24 + 16 * i, name)
        svg.line(w - 140, 20 + 16 * i, w - 125, 20 + 16 * i, PALETTE[i], 2.0)
    svg.text(w / 2, h - 8, "entropy (nats)", anchor="middle")
    svg.text(pad, h - pad + 14, "0", anchor="middle")
    svg.text(w - 10, h - pad + 14, f"{math.log(n_classes):.2f}", anchor="end")
    return svg


def sigmoid_svg(curve: dict) -> Svg:
    """Sigmoid before unlearning and after unlearning each selected point."""
    w, h, pad = 520, 320, 40
    svg = Svg(w, h)
    xs = np.asarray(curve["x"])
    lo, hi = float(xs.min()), float(xs.max())

    def to_px(x, y):
        return pad + (w - pad - 10) * (x - lo) / (hi - lo), h - pad - (h - pad - 10) * y

    svg.line(pad, h - pad, w - 10, h - pad)
    svg.line(pad, h - pad, pad, 10)
    svg.line(*to_px(lo, 0.5), *to_px(hi, 0.5), "#999999", 1.0, dash="4,3")
    styles = (("before", "#000000", None), ("boundary", PALETTE[1], "6,3"), ("saturated", PALETTE[0], "2,2"))
    for i, (key, colour, dash) in enumerate(styles):
        if key not in curve:
            continue
        svg.polyline([to_px(x, y) for x, y in zip(xs, curve[key])], colour, 1.5, dash)
        svg.text(w - 110, 24 + 16 * i, key)
        svg.line(w - 130, 20 + 16 * i, w - 115, 20 + 16 * i, colour, 1.5, dash)
        if f"{key}_x" in curve:
            fx = curve[f"{key}_x"]
            fy = float(np.interp(fx, xs, curve["before"]))
            svg.circle(*to_px(fx, fy), 4, colour)
    svg.text(w / 2, h - 8, "x", anchor="middle")
    return svg


def render_reports(out_dir, table: ResultTable | None = None, geometry: GeometryResult | None = None,
                   entropy: EntropyResult | None = None, sigmoid: SigmoidResult | None = None,
                   sweep: SweepResult | None = None) -> list[Path]:
    """Write every artefact for the given results into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if table is not None:
        written += [write_result_csv(table, out / "results.csv"), write_cells_csv(table, out / "cells.csv")]
    if geometry is not None:
        rows = ((r.dataset, r.repeat, r.seed, r.role, r.forget_index, r.confidence_before, r.confidence_after,
                 *(r.agreement[k] for k in sorted(r.agreement))) for r in geometry.records)
        keys = sorted(geometry.records[0].agreement) if geometry.records else []
        written.append(_write_csv(out / "geometry.csv", ("dataset", "repeat", "seed", "role", "forget_index",
                                                         "confidence_before", "confidence_after", *keys), rows))
        for s in geometry.snapshots:
            written.append(boundary_svg(s).save(out / f"boundary_{s.dataset}_{s.role}_{s.seed}.svg"))
    if entropy is not None and entropy.records:
        rows = ((r.repeat, r.seed, r.median("baseline"), r.median("retrain"), r.median("jit"), r.wilcoxon_p,
                 r.retain_accuracy["baseline"], r.retain_accuracy["jit"], r.retain_accuracy["retrain"],
                 r.mia["baseline"], r.mia["jit"], r.mia["retrain"]) for r in entropy.records)
        written.append(_write_csv(out / "entropy.csv", (
            "repeat", "seed", "median_baseline", "median_retrain", "median_jit", "wilcoxon_p",
            "dr_acc_baseline", "dr_acc_jit", "dr_acc_retrain", "mia_baseline", "mia_jit", "mia_retrain"), rows))
        written.append(entropy_histogram_svg(entropy.records[0]).save(out / "entropy_hist.svg"))
    if sigmoid is not None:
        rows = ((r.repeat, r.seed, r.role, r.x, r.f_before, r.f_after, r.max_displacement) for r in sigmoid.records)
        written.append(_write_csv(out / "sigmoid.csv", ("repeat", "seed", "role", "x", "f_before", "f_after",
                                                        "max_displacement"), rows))
        if sigmoid.curves:
            written.append(sigmoid_svg(sigmoid.curves[0]).save(out / "sigmoid.svg"))
    if sweep is not None:
        written.append(write_sweep_csv(sweep, out / "sweep.csv"))
    return written
