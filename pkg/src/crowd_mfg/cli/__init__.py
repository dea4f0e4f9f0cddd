"""Configuration, experiment orchestration and file output."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import RunResult, run_experiment
from .initial import initial_datum
from .main import main
from .output import read_frame_csv, write_frame_csv

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "initial_datum",
    "load_config",
    "main",
    "parse_config",
    "read_frame_csv",
    "run_experiment",
    "write_frame_csv",
]
