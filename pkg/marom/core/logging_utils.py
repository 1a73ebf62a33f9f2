from __future__ import annotations

import json
import logging
import sys
from typing import TextIO

from marom.core.config import load_settings

# LogRecord attributes that are not user-supplied `extra` fields.
_RESERVED = set(
    logging.LogRecord("x", logging.INFO, "x", 0, "x", None, None).__dict__
) | {"message", "asctime", "taskName"}

_LEVELS = {
    "error": logging.ERROR,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

_HANDLER_NAME = "marom-json"


def _jsonable(value: object) -> object:
    try:
        json.dumps(value)
        return value
    except (TypeError, ValueError):
        return repr(value)


class JsonLogFormatter(logging.Formatter):
    """One JSON object per record: event name plus the `extra` context."""

    def format(self, record: logging.LogRecord) -> str:
        log: dict[str, object] = {
            "event": record.getMessage(),
            "level": record.levelname.lower(),
            "logger": record.name,
        }
        for key, value in record.__dict__.items():
            if key in _RESERVED or key.startswith("_"):
                continue
            log[key] = _jsonable(value)
        if record.exc_info:
            log["exc"] = self.formatException(record.exc_info)
        return json.dumps(log, ensure_ascii=False, sort_keys=False)


def level_from_name(name: str | None) -> int:
    return _LEVELS.get((name or "info").strip().lower(), logging.INFO)


def configure_logging(level: str | None = None, stream: TextIO | None = None) -> None:
    """Install (or replace) the JSON stderr handler on the `marom` logger."""
    if level is None:
        level = load_settings().log_level
    logger = logging.getLogger("marom")
    for handler in list(logger.handlers):
        if handler.get_name() == _HANDLER_NAME:
            logger.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(JsonLogFormatter())
    logger.addHandler(handler)
    logger.setLevel(level_from_name(level))
    logger.propagate = False
