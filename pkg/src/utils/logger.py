"""
Logging utilities for hierform
"""

import logging
import sys
from pathlib import Path
from typing import Optional

LOGGER_NAME = "hierform"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
CONSOLE_HANDLER = "hierform-console"


def setup_logger(log_level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """Configure and return the package logger"""
    logger = logging.getLogger(LOGGER_NAME)

    # Set log level
    level = getattr(logging, log_level.upper(), logging.INFO)
    logger.setLevel(level)

    # Console output goes to stderr; stdout carries command results
    if not any(handler.get_name() == CONSOLE_HANDLER for handler in logger.handlers):
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        console_handler.set_name(CONSOLE_HANDLER)
        logger.addHandler(console_handler)

    # Create file handler if log file provided
    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        already_open = any(
            isinstance(handler, logging.FileHandler) and Path(handler.baseFilename) == log_path.resolve()
            for handler in logger.handlers
        )
        if not already_open:
            file_handler = logging.FileHandler(log_path)
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
            logger.addHandler(file_handler)

    logger.propagate = False
    return logger


# Create a default logger
logger = setup_logger("WARNING")
