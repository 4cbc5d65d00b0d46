"""Configuration, experiment orchestration, plotting and the command line interface."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config, serialize
from .plotting import emit_plot, emit_xy_plot
from .runner import (
    Setup,
    Table1,
    build_setup,
    generate_data,
    run_inversion,
    run_sweep,
    run_table1,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "serialize",
    "emit_plot",
    "emit_xy_plot",
    "Setup",
    "Table1",
    "build_setup",
    "generate_data",
    "run_inversion",
    "run_sweep",
    "run_table1",
]
