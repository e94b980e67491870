"""Seeded benchmark runner, boundary and entropy studies, sweeps and report rendering."""

from jitlab.experiment.benchmark import ResultTable, run_benchmark
from jitlab.experiment.config import ExperimentConfig, load_config
from jitlab.experiment.reports import render_reports
from jitlab.experiment.studies import (run_entropy_study, run_geometry_study, run_sensitivity_sweep,
                                       run_sigmoid_study)

__all__ = ["ExperimentConfig", "ResultTable", "load_config", "render_reports", "run_benchmark",
           "run_entropy_study", "run_geometry_study", "run_sensitivity_sweep", "run_sigmoid_study"]
