"""Experiment configuration, drivers and CLI."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config, parse_field, parse_number
from .runners import (
    ErrorReport,
    FineRun,
    LimitReport,
    estimate_rate,
    homogenized_tensor,
    pairwise_rates,
    run_fine_reference,
    run_highcontrast_limit,
    run_homogenization_error,
    run_lod_convergence,
)

__all__ = [
    "ConfigError", "ExperimentConfig", "load_config", "parse_config", "parse_field", "parse_number",
    "ErrorReport", "FineRun", "LimitReport", "estimate_rate", "homogenized_tensor", "pairwise_rates",
    "run_fine_reference", "run_highcontrast_limit", "run_homogenization_error", "run_lod_convergence",
]
