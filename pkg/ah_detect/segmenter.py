# -*- coding: utf-8 -*-

"""
Turns validated annotations into clip plans. Pure time arithmetic on
integer milliseconds; no media is touched here.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from .annotations import TimeInterval, VideoAnnotation
from .errors import DomainError, ManifestParseError, PreconditionError
from .utils import Seconds, iter_jsonl, ms_to_seconds, to_millis, write_jsonl


@dataclass(frozen=True)
class SegmentationPolicy:
    """
    Clip partitioning rules.

    Attributes:
        clip_len_ms:
            maximum clip length (default 5 s)
        min_tail_ms:
            a trailing remainder shorter than this is discarded (default 1 s)
        rescue_empty:
            at inference, return one whole-video clip if partitioning yields none
        split_negatives:
            when `False`, negative training videos are kept whole as one clip
    """

    clip_len_ms: int = 5000
    min_tail_ms: int = 1000
    rescue_empty: bool = False
    split_negatives: bool = True

    def __post_init__(self) -> None:
        if self.clip_len_ms <= 0:
            raise DomainError("Clip length must be greater than 0.")
        if not 0 <= self.min_tail_ms <= self.clip_len_ms:
            raise DomainError(
                "Minimum tail must be between 0 and the clip length, got "
                f"{self.min_tail_ms} ms for {self.clip_len_ms} ms clips."
            )

    @classmethod
    def from_seconds(
        cls,
        clip_len_s: Seconds = 5,
        min_tail_s: Seconds = 1,
        rescue_empty: bool = False,
        split_negatives: bool = True,
    ) -> "SegmentationPolicy":
        return cls(
            clip_len_ms=to_millis(clip_len_s),
            min_tail_ms=to_millis(min_tail_s),
            rescue_empty=rescue_empty,
            split_negatives=split_negatives,
        )

    @property
    def clip_len_s(self) -> float:
        return ms_to_seconds(self.clip_len_ms)

    @property
    def min_tail_s(self) -> float:
        return ms_to_seconds(self.min_tail_ms)


@dataclass(frozen=True)
class ClipSpec:
    """A planned clip window in source-video coordinates."""

    video_id: str
    window: TimeInterval
    label: Optional[int] = None

    def __post_init__(self) -> None:
        if self.label is not None and self.label not in (0, 1):
            raise DomainError(
                f"Clip label must be 0, 1 or None, got {self.label!r}."
            )

    @property
    def clip_id(self) -> str:
        return f"{self.video_id}:{self.window.start_ms}-{self.window.end_ms}"

    def to_record(self) -> Dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "video_id": self.video_id,
            "start_s": self.window.start_s,
            "end_s": self.window.end_s,
            "label": self.label,
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "ClipSpec":
        spec = cls(
            video_id=record["video_id"],
            window=TimeInterval.from_seconds(record["start_s"], record["end_s"]),
            label=record.get("label"),
        )
        if "clip_id" in record and record["clip_id"] != spec.clip_id:
            raise DomainError(
                f"clip_id '{record['clip_id']}' does not match its window "
                f"({spec.clip_id})."
            )
        return spec


def partition(
    interval: TimeInterval, policy: SegmentationPolicy
) -> List[TimeInterval]:
    """
    Splits an interval into consecutive clips of at most `policy.clip_len_ms`.

    An interval shorter than one clip is returned unchanged. Otherwise full
    clips are laid from the start and a trailing remainder survives only
    when it is at least `policy.min_tail_ms` long.

    Args:
        interval:
            span to split
        policy:
            `SegmentationPolicy`

    Returns:
        ordered, disjoint windows inside `interval`
    """
    if interval.duration_ms < policy.clip_len_ms:
        return [interval]

    windows = []
    cursor = interval.start_ms
    while interval.end_ms - cursor >= policy.clip_len_ms:
        windows.append(TimeInterval(cursor, cursor + policy.clip_len_ms))
        cursor += policy.clip_len_ms

    remainder = interval.end_ms - cursor
    if remainder > 0 and remainder >= policy.min_tail_ms:
        windows.append(TimeInterval(cursor, interval.end_ms))
    return windows


def plan_training_clips(
    annotation: VideoAnnotation, policy: SegmentationPolicy
) -> List[ClipSpec]:
    """
    Plans labeled training clips for one validated video.

    Negative videos are split over their whole duration and every clip is
    labeled 0. Positive videos are split segment by segment and every clip
    is labeled 1.

    Raises:
        PreconditionError: If `annotation` has not been validated.
    """
    if annotation.duration_ms is None:
        raise PreconditionError(
            f"Annotation '{annotation.video_id}' must be validated against its "
            "media duration before planning."
        )

    if annotation.global_label == 0:
        whole = TimeInterval(0, annotation.duration_ms)
        windows = partition(whole, policy) if policy.split_negatives else [whole]
        return [ClipSpec(annotation.video_id, w, 0) for w in windows]

    if not annotation.segments:
        raise PreconditionError(
            f"Positive annotation '{annotation.video_id}' has no segments."
        )
    clips = []
    for segment in annotation.segments:
        clips.extend(
            ClipSpec(annotation.video_id, w, 1) for w in partition(segment, policy)
        )
    return clips


def plan_inference_clips(
    video_id: str, duration_s: Seconds, policy: SegmentationPolicy
) -> List[ClipSpec]:
    """
    Plans unlabeled clips covering a test video.

    Raises:
        DomainError: If `duration_s` is not positive.
    """
    duration_ms = to_millis(duration_s)
    if duration_ms <= 0:
        raise DomainError(
            f"Duration of video '{video_id}' must be greater than 0, got {duration_s}."
        )
    whole = TimeInterval(0, duration_ms)
    windows = partition(whole, policy)
    if not windows and policy.rescue_empty:
        windows = [whole]
    return [ClipSpec(video_id, w) for w in windows]


def clip_overlaps(clip: ClipSpec, segments: Sequence[TimeInterval]) -> bool:
    """Whether a clip window intersects any of the given segments."""
    return any(clip.window.overlaps(seg) for seg in segments)


def write_plan(clips: Iterable[ClipSpec], path: Union[str, Path]) -> int:
    return write_jsonl((c.to_record() for c in clips), path)


def read_plan(path: Union[str, Path]) -> List[ClipSpec]:
    clips = []
    for lineno, record in iter_jsonl(path):
        try:
            clips.append(ClipSpec.from_record(record))
        except (KeyError, DomainError) as exc:
            raise ManifestParseError(f"invalid clip record: {exc}", lineno)
    return clips
