# -*- coding: utf-8 -*-

"""
Shared utilities module.
"""

import json
import math
import os
import tempfile
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Tuple, Union

from .errors import DomainError

Seconds = Union[int, float, str, Decimal]


def to_millis(seconds: Seconds) -> int:
    """
    Converts a time value in seconds into integer milliseconds.

    Rounds half away from zero, so `1.0005` becomes `1001` and `-1.0005`
    becomes `-1001`.

    Args:
        seconds:
            time in seconds as int, float, numeric string or `Decimal`

    Returns:
        milliseconds as int

    Raises:
        DomainError: If `seconds` is not numeric or not finite.
    """
    if isinstance(seconds, bool):
        raise DomainError("Argument 'seconds' must be a number.")
    if isinstance(seconds, float):
        if not math.isfinite(seconds):
            raise DomainError("Argument 'seconds' must be finite.")
        value = Decimal(repr(seconds))
    else:
        try:
            value = Decimal(str(seconds).strip())
        except InvalidOperation:
            raise DomainError(f"Argument 'seconds' is not a number: {seconds!r}.")
    if not value.is_finite():
        raise DomainError("Argument 'seconds' must be finite.")
    return int((value * 1000).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def ms_to_seconds(ms: int) -> float:
    """Milliseconds to float seconds, exact at millisecond resolution."""
    return ms / 1000


def format_seconds(ms: int) -> str:
    """Renders milliseconds as a seconds string with three decimals."""
    sign = "-" if ms < 0 else ""
    ms = abs(ms)
    return f"{sign}{ms // 1000}.{ms % 1000:03d}"


def dump_json_line(record: Dict[str, Any]) -> str:
    """Serializes one record in insertion key order without trailing newline."""
    return json.dumps(record, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(records: Iterable[Dict[str, Any]], path: Union[str, Path]) -> int:
    """
    Writes records as JSON lines.

    The file is written to a temporary sibling first and moved into place, so
    a failure never leaves a truncated trailing line behind.

    Args:
        records:
            iterable of JSON-serializable dictionaries
        path:
            destination file

    Returns:
        number of lines written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    count = 0
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            for record in records:
                fh.write(dump_json_line(record))
                fh.write("\n")
                count += 1
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return count


def write_json(data: Any, path: Union[str, Path]) -> None:
    """Writes an indented JSON document with a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(data, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def iter_jsonl(path: Union[str, Path]) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yields `(line_number, record)` pairs, skipping blank lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, json.loads(line)
