# -*- coding: utf-8 -*-

"""
Parses, validates and normalizes A/H annotation manifests.

A manifest is a JSON-lines file, one video per line:

```json
{"video_id": "clip_02", "path": "videos/clip_02.mp4", "label": 1, "segments": [[3.0, 9.0]]}
```

`duration` (seconds) is accepted as an optional field.
"""  # noqa: E501

import json
import logging
from dataclasses import dataclass, replace
from decimal import Decimal
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from .errors import (
    DomainError,
    DuplicateVideoError,
    InconsistentAnnotationError,
    ManifestParseError,
)
from .utils import Seconds, format_seconds, ms_to_seconds, to_millis

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class TimeInterval:
    """
    Half-open time window `[start, end)` kept in integer milliseconds.
    """

    start_ms: int
    end_ms: int

    def __post_init__(self) -> None:
        if not isinstance(self.start_ms, int) or not isinstance(self.end_ms, int):
            raise TypeError("Interval bounds must be integer milliseconds.")
        if self.start_ms < 0:
            raise DomainError(
                f"Interval start must be >= 0, got {format_seconds(self.start_ms)}s."
            )
        if self.end_ms <= self.start_ms:
            raise DomainError(
                "Interval end must be greater than start, got "
                f"({format_seconds(self.start_ms)}, {format_seconds(self.end_ms)})."
            )

    @classmethod
    def from_seconds(cls, start_s: Seconds, end_s: Seconds) -> "TimeInterval":
        return cls(to_millis(start_s), to_millis(end_s))

    @property
    def start_s(self) -> float:
        return ms_to_seconds(self.start_ms)

    @property
    def end_s(self) -> float:
        return ms_to_seconds(self.end_ms)

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms

    @property
    def duration_s(self) -> float:
        return ms_to_seconds(self.duration_ms)

    def contains(self, t_ms: int) -> bool:
        return self.start_ms <= t_ms < self.end_ms

    def overlaps(self, other: "TimeInterval") -> bool:
        return self.start_ms < other.end_ms and other.start_ms < self.end_ms

    def clamp(self, lo_ms: int, hi_ms: int) -> Optional["TimeInterval"]:
        """Intersection with `[lo_ms, hi_ms]`, or `None` when empty."""
        start = max(self.start_ms, lo_ms)
        end = min(self.end_ms, hi_ms)
        if end <= start:
            return None
        return TimeInterval(start, end)

    def __repr__(self) -> str:
        return f"({format_seconds(self.start_ms)}, {format_seconds(self.end_ms)})"


@dataclass(frozen=True)
class VideoAnnotation:
    """
    One source video with its global A/H label and annotated segments.
    """

    video_id: str
    media_path: str
    global_label: int
    segments: Tuple[TimeInterval, ...] = ()
    duration_ms: Optional[int] = None

    def __post_init__(self) -> None:
        if not isinstance(self.video_id, str) or not self.video_id.strip():
            raise DomainError("Argument 'video_id' must be a non-empty string.")
        if isinstance(self.global_label, bool) or self.global_label not in (0, 1):
            raise DomainError(
                f"Label of video '{self.video_id}' must be 0 or 1, "
                f"got {self.global_label!r}."
            )
        if self.global_label == 0 and self.segments:
            raise DomainError(
                f"Negative video '{self.video_id}' cannot carry A/H segments."
            )
        if self.duration_ms is not None and self.duration_ms <= 0:
            raise DomainError(f"Duration of video '{self.video_id}' must be > 0.")

    @property
    def duration_s(self) -> Optional[float]:
        if self.duration_ms is None:
            return None
        return ms_to_seconds(self.duration_ms)

    @property
    def is_validated(self) -> bool:
        return self.duration_ms is not None

    @property
    def annotated_ms(self) -> int:
        return sum(s.duration_ms for s in self.segments)


@dataclass(frozen=True)
class Diagnostic:
    """Structured warning raised while normalizing an annotation."""

    video_id: str
    code: str
    detail: str

    def to_record(self) -> Dict[str, str]:
        return {"video_id": self.video_id, "code": self.code, "detail": self.detail}


def _parse_segments(raw: Any, lineno: int) -> Tuple[TimeInterval, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ManifestParseError("'segments' must be a list of [start, end].", lineno)
    segments = []
    for pair in raw:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ManifestParseError(
                f"segment {pair!r} must be a [start, end] pair.", lineno
            )
        try:
            segments.append(TimeInterval.from_seconds(pair[0], pair[1]))
        except (DomainError, TypeError) as exc:
            raise ManifestParseError(f"invalid segment {pair!r}: {exc}", lineno)
    return tuple(segments)


def _parse_record(record: Dict[str, Any], lineno: int) -> VideoAnnotation:
    if not isinstance(record, dict):
        raise ManifestParseError("record must be a JSON object.", lineno)
    for key in ("video_id", "path", "label"):
        if key not in record:
            raise ManifestParseError(f"missing required field '{key}'.", lineno)

    video_id = record["video_id"]
    if not isinstance(video_id, str) or not video_id.strip():
        raise ManifestParseError("'video_id' must be a non-empty string.", lineno)
    media_path = record["path"]
    if not isinstance(media_path, str) or not media_path.strip():
        raise ManifestParseError("'path' must be a non-empty string.", lineno)

    label = record["label"]
    if isinstance(label, bool) or not isinstance(label, (int, Decimal)):
        raise DomainError(f"Line {lineno}: label must be 0 or 1, got {label!r}.")
    if label not in (0, 1):
        raise DomainError(f"Line {lineno}: label must be 0 or 1, got {label!r}.")

    segments = _parse_segments(record.get("segments"), lineno)

    duration_ms = None
    if record.get("duration") is not None:
        try:
            duration_ms = to_millis(record["duration"])
        except DomainError as exc:
            raise ManifestParseError(f"invalid duration: {exc}", lineno)

    try:
        return VideoAnnotation(
            video_id=video_id,
            media_path=media_path,
            global_label=int(label),
            segments=segments,
            duration_ms=duration_ms,
        )
    except DomainError as exc:
        raise ManifestParseError(str(exc), lineno)


def parse_manifest(manifest: Union[str, bytes]) -> List[VideoAnnotation]:
    """
    Parses a JSON-lines annotation manifest.

    Segments are read as given; merging and clamping happen in `validate`.

    Args:
        manifest:
            raw manifest text or bytes

    Returns:
        list of `VideoAnnotation` objects in file order

    Raises:
        ManifestParseError: If a record is malformed (message names the line).
        DuplicateVideoError: If two records share a `video_id`.
        DomainError: If a label is outside {0, 1}.
    """
    if isinstance(manifest, bytes):
        manifest = manifest.decode("utf-8")

    annotations: List[VideoAnnotation] = []
    seen: Dict[str, int] = {}
    for lineno, line in enumerate(manifest.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line, parse_float=Decimal)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"invalid JSON ({exc.msg}).", lineno)

        annotation = _parse_record(record, lineno)
        if annotation.video_id in seen:
            raise DuplicateVideoError(
                f"video_id '{annotation.video_id}' already defined on line "
                f"{seen[annotation.video_id]}.",
                lineno,
            )
        seen[annotation.video_id] = lineno
        annotations.append(annotation)
    return annotations


def load_manifest(path: Union[str, Path]) -> List[VideoAnnotation]:
    """Reads and parses a manifest file."""
    with open(path, "rb") as fh:
        return parse_manifest(fh.read())


def merge_intervals(segments: Iterable[TimeInterval]) -> List[TimeInterval]:
    """
    Merges overlapping and touching intervals.

    Args:
        segments:
            intervals in any order

    Returns:
        sorted, pairwise disjoint intervals covering the same time points
    """
    merged: List[TimeInterval] = []
    for seg in sorted(segments):
        if merged and seg.start_ms <= merged[-1].end_ms:
            last = merged[-1]
            if seg.end_ms > last.end_ms:
                merged[-1] = TimeInterval(last.start_ms, seg.end_ms)
        else:
            merged.append(seg)
    return merged


def validate(
    annotation: VideoAnnotation,
    probed_duration_s: Seconds,
    diagnostics: Optional[List[Diagnostic]] = None,
) -> VideoAnnotation:
    """
    Binds an annotation to the measured duration of its media.

    Segments are merged, clamped to `[0, duration]` and dropped when nothing
    is left of them. Every drop or clamp is logged and, when `diagnostics`
    is given, appended to it.

    Args:
        annotation:
            parsed `VideoAnnotation`
        probed_duration_s:
            media duration reported by the prober
        diagnostics:
            optional list collecting `Diagnostic` records

    Returns:
        new `VideoAnnotation` with `duration_ms` set

    Raises:
        DomainError: If `probed_duration_s` is not positive.
        InconsistentAnnotationError: If a positive video loses all segments.
    """
    duration_ms = to_millis(probed_duration_s)
    if duration_ms <= 0:
        raise DomainError("Argument 'probed_duration_s' must be greater than 0.")

    def record(code: str, detail: str) -> None:
        diag = Diagnostic(annotation.video_id, code, detail)
        logger.warning(
            detail, extra={"video_id": annotation.video_id, "code": code}
        )
        if diagnostics is not None:
            diagnostics.append(diag)

    merged = merge_intervals(annotation.segments)
    if len(merged) < len(annotation.segments):
        record(
            "segments_merged",
            f"{len(annotation.segments)} segments merged into {len(merged)}",
        )

    kept: List[TimeInterval] = []
    for seg in merged:
        clamped = seg.clamp(0, duration_ms)
        if clamped is None:
            record(
                "segment_dropped",
                f"segment {seg!r} lies outside [0, {format_seconds(duration_ms)}]",
            )
            continue
        if clamped != seg:
            record("segment_clamped", f"segment {seg!r} clamped to {clamped!r}")
        kept.append(clamped)

    if annotation.global_label == 1 and not kept:
        raise InconsistentAnnotationError(
            f"Positive video '{annotation.video_id}' has no annotated segment "
            f"within its {format_seconds(duration_ms)}s duration."
        )

    return replace(annotation, segments=tuple(kept), duration_ms=duration_ms)
