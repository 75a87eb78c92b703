"""Logging configuration shared by the CLI and long-running experiments."""

import logging
import os
from typing import Optional, Union

LOG_FORMAT = "[%(name)s] %(levelname)s %(message)s"


def configure_logging(level: Optional[Union[str, int]] = None) -> None:
    """Install a single stream handler on the package logger.

    The level falls back to ``MCL_LOG_LEVEL`` and then ``INFO``.
    """
    if level is None:
        level = os.getenv("MCL_LOG_LEVEL", "INFO")
    if isinstance(level, str):
        level = level.upper()

    logger = logging.getLogger("marginal_correspondence")
    logger.setLevel(level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.propagate = False
