# -*- coding: utf-8 -*-

"""
JSON-lines logging for the command-line pipeline.
"""

import json
import logging
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import IO, Iterator, Optional

# attributes every LogRecord carries; anything else came in through `extra`
_RESERVED = set(
    logging.LogRecord("", 0, "", 0, "", None, None).__dict__
) | {"message", "asctime"}

LEVELS = {-1: logging.WARNING, 0: logging.INFO, 1: logging.DEBUG}


class JsonLogFormatter(logging.Formatter):
    """Formats a record as one JSON object per line."""

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(
                timespec="milliseconds"
            ),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RESERVED and not key.startswith("_"):
                entry[key] = value
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, ensure_ascii=False, default=str)


def configure_logging(verbosity: int = 0, stream: Optional[IO[str]] = None) -> None:
    """
    Sends `ah_detect` logs to `stream` (stderr by default) as JSON lines.

    Args:
        verbosity:
            -1 (quiet, warnings and up), 0 (info) or 1 (debug)
        stream:
            text stream to write to
    """
    logger = logging.getLogger("ah_detect")
    for handler in list(logger.handlers):
        if getattr(handler, "_ah_detect_cli", False):
            logger.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    setattr(handler, "_ah_detect_cli", True)
    logger.addHandler(handler)
    logger.setLevel(LEVELS[max(-1, min(1, verbosity))])
    logger.propagate = False


@contextmanager
def log_stage(name: str, logger: Optional[logging.Logger] = None) -> Iterator[None]:
    """Logs the start and end of a pipeline stage with its elapsed time."""
    logger = logger or logging.getLogger("ah_detect.stage")
    logger.info("stage started", extra={"stage": name})
    started = time.perf_counter()
    try:
        yield
    except Exception:
        logger.error(
            "stage failed",
            extra={"stage": name, "elapsed_s": round(time.perf_counter() - started, 3)},
        )
        raise
    logger.info(
        "stage finished",
        extra={"stage": name, "elapsed_s": round(time.perf_counter() - started, 3)},
    )
