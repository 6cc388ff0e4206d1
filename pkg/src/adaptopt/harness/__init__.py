"""Experiment harness: data loading, configuration, runs and the CLI."""
from .config import ExperimentConfig, load_config, validate_config
from .data import gen_synthetic, load_csv, load_idx
from .experiments import run_experiment, sweep

__all__ = ["ExperimentConfig", "load_config", "validate_config", "gen_synthetic", "load_csv",
           "load_idx", "run_experiment", "sweep"]
