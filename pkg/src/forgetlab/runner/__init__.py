"""Config loading, experiment orchestration and result serialization."""

from .config import ExperimentConfig, load_config, parse_config
from .experiment import RunSummary, derive_seed, run_experiment
from .results import LAB_HEADER, SIM_HEADER, emit_csv, read_csv

__all__ = [
    "ExperimentConfig",
    "LAB_HEADER",
    "RunSummary",
    "SIM_HEADER",
    "derive_seed",
    "emit_csv",
    "load_config",
    "parse_config",
    "read_csv",
    "run_experiment",
]
