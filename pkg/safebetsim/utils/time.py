from datetime import datetime
from typing import Union

import pytz


def get_current_timestamp(timezone: str = "UTC") -> str:
    """Get current timestamp in ISO format, timezone aware."""
    return get_timezone_aware_datetime(timezone).isoformat()


def get_timezone_aware_datetime(timezone: str = "UTC") -> datetime:
    """Get current datetime in specified timezone."""
    tz = pytz.timezone(timezone)
    return datetime.now(tz)


def format_duration(seconds: Union[int, float]) -> str:
    """Format duration in seconds to HH:MM:SS format."""
    seconds = int(round(seconds))
    hours = seconds // 3600
    minutes = (seconds % 3600) // 60
    secs = seconds % 60

    if hours > 0:
        return f"{hours:02d}:{minutes:02d}:{secs:02d}"
    return f"{minutes:02d}:{secs:02d}"


def experiment_id(timezone: str = "UTC") -> str:
    """Build a sortable experiment identifier from the wall clock."""
    return get_timezone_aware_datetime(timezone).strftime("%Y%m%dT%H%M%S%fZ")
