"""Experiment specs, workloads, metrics and the command line."""
from .config import ExperimentSpec, SpecError, load_spec
from .metrics import MetricsReport, emit_results, fct_ccdf, ideal_time_ns, tail_stats
from .runner import Nonquiescence, run_experiment
from .workloads import gen_colocated_incast, gen_permutation

__all__ = ["ExperimentSpec", "SpecError", "load_spec", "MetricsReport", "emit_results", "fct_ccdf", "ideal_time_ns",
           "tail_stats", "Nonquiescence", "run_experiment", "gen_colocated_incast", "gen_permutation"]
