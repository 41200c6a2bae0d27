from .config import (
    ConfigError,
    ExperimentConfig,
    TraceSource,
    load_experiment_config,
    parse_experiment_config,
)
from .emit import EmitError, emit, load_report, read_runs_csv, write_json, write_runs_csv
from .report import RUN_COLUMNS, Report, RunRecord

__all__ = [
    "RUN_COLUMNS",
    "ConfigError",
    "EmitError",
    "ExperimentConfig",
    "Report",
    "RunRecord",
    "TraceSource",
    "emit",
    "load_experiment_config",
    "load_report",
    "parse_experiment_config",
    "read_runs_csv",
    "write_json",
    "write_runs_csv",
]
