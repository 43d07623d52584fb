"""
Structured Logging
JSON log records for every module logger
"""

import json
import logging
import sys

ROOT_LOGGER = "casimir-cusp"


class JsonFormatter(logging.Formatter):
    def format(self, record):
        log_record = {
            "severity": record.levelname,
            "logger": record.name,
            "timestamp": self.formatTime(record),
        }
        if isinstance(record.msg, dict):
            log_record.update(record.msg)
        else:
            log_record["message"] = record.getMessage()
        return json.dumps(log_record, default=str)


def get_logger(module_name):
    """
    Returns the child logger for a package module

    Args:
        module_name (str): usually __name__, e.g. "casimir_cusp.flow"

    Returns:
        logging.Logger: logger named "casimir-cusp.flow"
    """
    short = module_name.rsplit(".", 1)[-1]
    return logging.getLogger(f"{ROOT_LOGGER}.{short}")


def configure_logging(level="INFO", stream=None):
    """Installs the JSON handler on the root package logger (idempotent)"""
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(level)
    if logger.hasHandlers():
        logger.handlers.clear()
    handler = logging.StreamHandler(stream or sys.stdout)
    handler.setFormatter(JsonFormatter())
    logger.addHandler(handler)
    logger.propagate = False
    return logger
