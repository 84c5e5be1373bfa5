"""Experiment harness: configuration, runner and the published example."""

from .config import ConfigError, ExperimentConfig, VectorProblem, example1_config, load_config, parse_config
from .example1 import EXAMPLE1_AIO, EXAMPLE1_CMDO, EXAMPLE1_VARS, build_example1, example1_graph
from .runner import ExperimentError, Trace, compute_metrics, run_aio, run_experiment

__all__ = [
    "ConfigError", "ExperimentConfig", "VectorProblem", "example1_config", "load_config", "parse_config",
    "EXAMPLE1_AIO", "EXAMPLE1_CMDO", "EXAMPLE1_VARS", "build_example1", "example1_graph",
    "ExperimentError", "Trace", "compute_metrics", "run_aio", "run_experiment",
]
