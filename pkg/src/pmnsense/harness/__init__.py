"""Experiment configuration, path matching, seeded runs and the CLI."""

from .config import ConfigError, ExperimentConfig
from .experiments import run_experiment, sweep
from .matching import MatchGates, MatchReport, match_paths

__all__ = ["ConfigError", "ExperimentConfig", "MatchGates", "MatchReport", "match_paths", "run_experiment", "sweep"]
