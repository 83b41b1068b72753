"""
Logger construction for command-line runs.

Console output stays human-readable; the optional run log is rotated and
written as one JSON object per line so verification runs can be grepped and
loaded back into pandas.
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional, Union

from pythonjsonlogger import jsonlogger


JSON_FIELDS = "%(asctime)s %(name)s %(levelname)s %(message)s"


def setup_logger(
    name: str = "duesenberry",
    log_file: Optional[Union[str, Path]] = None,
    level: str = "INFO",
) -> logging.Logger:
    """
    Configure the package logger.

    Args:
        name: Logger name (child modules propagate to it)
        log_file: Optional path of a rotating JSON log
        level: Console level name

    Returns:
        The configured logger
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)

    # Re-running inside one process must not stack handlers
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(level.upper())
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logger.addHandler(console)

    if log_file is not None:
        path = Path(log_file)
        path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            path,
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5,
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(jsonlogger.JsonFormatter(JSON_FIELDS))
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger
