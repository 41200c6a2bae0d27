import sys
from pathlib import Path
from typing import Optional

from loguru import logger

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level:<8}</level> | "
    "<cyan>{extra[name]}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
    "<level>{message}</level>"
)
FILE_FORMAT = (
    "{time:YYYY-MM-DD HH:mm:ss} | {level:<8} | "
    "{extra[name]}:{function}:{line} - {message}"
)


def setup_logger(log_level: str = "INFO", log_file: Optional[str] = None):
    """Setup standardized logging configuration.

    The console sink is always installed. File sinks (the main log plus an
    ``errors.log`` beside it) are only added when ``log_file`` is given.
    """
    logger.remove()
    logger.configure(extra={"name": "safebetsim"})

    logger.add(
        sys.stderr,
        format=CONSOLE_FORMAT,
        level=log_level,
        colorize=True,
    )

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        logger.add(
            log_file,
            format=FILE_FORMAT,
            level=log_level,
            rotation="10 MB",
            retention="30 days",
            compression="zip",
        )

        error_log_file = log_path.parent / "errors.log"
        logger.add(
            str(error_log_file),
            format=FILE_FORMAT,
            level="ERROR",
            rotation="5 MB",
            retention="60 days",
            compression="zip",
        )

    logger.debug("Logger initialized")


def get_logger(name: Optional[str] = None):
    """Get a logger instance with the specified name."""
    if name:
        return logger.bind(name=name)
    return logger


# Initialize logger when module is imported
if not logger._core.handlers:
    setup_logger(log_level="WARNING")
