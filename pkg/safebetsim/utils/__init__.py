from .db import RunDatabase
from .logger import get_logger, setup_logger
from .time import (
    experiment_id,
    format_duration,
    get_current_timestamp,
    get_timezone_aware_datetime,
)

__all__ = [
    "RunDatabase",
    "experiment_id",
    "format_duration",
    "get_current_timestamp",
    "get_timezone_aware_datetime",
    "setup_logger",
    "get_logger",
]
