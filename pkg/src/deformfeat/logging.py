"""Logging configuration."""

import logging
import sys
import time
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
LOG_DATE_FORMAT = "%H:%M:%S"
LOGGER_NAME = "deformfeat"


def setup_logging(debug: bool = False, log_file: Path | None = None) -> logging.Logger:
    """Configure the package logger.

    Diagnostics go to stderr; stdout carries feature lists, match tables and
    reports, so nothing is logged there.

    Args:
        debug: Enable debug level logging
        log_file: Optional file that receives every record at DEBUG level

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG if debug else logging.INFO)

    # Repeated calls (tests, nested main()) must not stack handlers
    logger.handlers.clear()

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if debug else logging.INFO)
    console.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))
    logger.addHandler(console)

    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))
        logger.addHandler(file_handler)

    return logger


def get_logger() -> logging.Logger:
    """Get the application logger."""
    return logging.getLogger(LOGGER_NAME)


@contextmanager
def timed(label: str, logger: logging.Logger | None = None, level: int = logging.DEBUG) -> Iterator[None]:
    """Log `label` with the wall time of the block in milliseconds."""
    start = time.perf_counter()
    yield
    (logger or get_logger()).log(level, f"{label} in {(time.perf_counter() - start) * 1000:.0f}ms")
