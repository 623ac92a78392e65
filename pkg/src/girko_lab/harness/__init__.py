"""Reproducible, seed-parallel numerical experiments."""

from .config import ConfigError, ExperimentConfig, load_config
from .runner import EXPERIMENTS, ExperimentResult, RunAborted, run, write_outputs

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "RunAborted",
    "load_config",
    "run",
    "write_outputs",
]
