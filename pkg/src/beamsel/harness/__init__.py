"""CLI and experiment orchestration."""

from .config import ConfigError, ExperimentConfig, default_config, from_dict, load_config
from .pipeline import (
    PipelineError,
    run_betasearch,
    run_eval,
    run_gen,
    run_report,
    run_train,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PipelineError",
    "default_config",
    "from_dict",
    "load_config",
    "run_betasearch",
    "run_eval",
    "run_gen",
    "run_report",
    "run_train",
]
