# -*- coding: utf-8 -*-

"""
Drives ffmpeg and ffprobe as subprocesses: probing, frame-accurate cutting,
audio extraction and synthetic fixture generation.

Clips are laid out as `out_dir/{video_id}/{clip_id}.mp4` with the audio
track, when extracted, next to it as `{clip_id}.wav`.
"""

import json
import logging
import os
import shutil
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .annotations import TimeInterval
from .errors import (
    DomainError,
    MediaFormatError,
    MediaToolError,
    ModalityMissingError,
    PreconditionError,
)
from .segmenter import ClipSpec
from .utils import Seconds, format_seconds, iter_jsonl, to_millis, write_jsonl

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# measured clip duration must match the planned window within this margin
DURATION_TOLERANCE_MS = 100
AUDIO_SAMPLE_RATE = 16000
MAX_FIXTURE_MS = 60_000


@dataclass(frozen=True)
class MediaInfo:
    duration_s: float
    has_audio: bool
    width: int
    height: int

    @property
    def duration_ms(self) -> int:
        return to_millis(self.duration_s)


@dataclass(frozen=True)
class ClipArtifact:
    clip_id: str
    video_path: str
    audio_path: Optional[str]
    measured_duration_s: float


@dataclass(frozen=True)
class ClipRecord:
    """A planned clip together with its materialized media files."""

    spec: ClipSpec
    video_path: str
    audio_path: Optional[str] = None

    @property
    def clip_id(self) -> str:
        return self.spec.clip_id

    @property
    def video_id(self) -> str:
        return self.spec.video_id

    @property
    def label(self) -> Optional[int]:
        return self.spec.label

    def to_record(self) -> Dict[str, Any]:
        record = self.spec.to_record()
        record["video_path"] = self.video_path
        record["audio_path"] = self.audio_path
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "ClipRecord":
        return cls(
            spec=ClipSpec.from_record(record),
            video_path=record["video_path"],
            audio_path=record.get("audio_path"),
        )


def _media_arg(path: PathLike) -> str:
    # `file:` keeps ffmpeg from reading "clip_01:0-5000.mp4" as a protocol
    return f"file:{path}"


@dataclass
class MediaToolchain:
    """
    Locations and codec choices for the external media tools.

    `AH_DETECT_FFMPEG` and `AH_DETECT_FFPROBE` environment variables take
    precedence over the configured binary names.
    """

    ffmpeg: str = "ffmpeg"
    ffprobe: str = "ffprobe"
    video_codec: str = "libx264"
    audio_codec: str = "aac"
    timeout_s: float = 600
    extra_env: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.ffmpeg = os.environ.get("AH_DETECT_FFMPEG", self.ffmpeg)
        self.ffprobe = os.environ.get("AH_DETECT_FFPROBE", self.ffprobe)

    def check(self) -> None:
        """
        Verifies both binaries can be found.

        Raises:
            MediaToolError: If ffmpeg or ffprobe is not available.
        """
        for name in (self.ffmpeg, self.ffprobe):
            if shutil.which(name) is None:
                raise MediaToolError(
                    f"Media tool '{name}' not found. Install ffmpeg or point "
                    "AH_DETECT_FFMPEG/AH_DETECT_FFPROBE at the binaries."
                )

    def _run(self, args: Sequence[str]) -> subprocess.CompletedProcess:
        logger.debug("running %s", " ".join(args))
        try:
            result = subprocess.run(
                list(args),
                capture_output=True,
                text=True,
                timeout=self.timeout_s,
                check=False,
                env={**os.environ, **self.extra_env},
            )
        except FileNotFoundError:
            raise MediaToolError(f"Media tool '{args[0]}' not found.")
        except subprocess.TimeoutExpired:
            raise MediaToolError(
                f"'{args[0]}' timed out after {self.timeout_s}s."
            )
        if result.returncode != 0:
            raise MediaToolError(
                f"'{args[0]}' exited with code {result.returncode}",
                returncode=result.returncode,
                stderr=result.stderr,
            )
        return result

    def probe(self, path: PathLike) -> MediaInfo:
        """
        Reads duration, audio presence and resolution of a media file.

        Raises:
            FileNotFoundError: If `path` does not exist.
            MediaFormatError: If ffprobe cannot parse the file.
        """
        if not Path(path).is_file():
            raise FileNotFoundError(f"Media file not found: {path}")
        args = [
            self.ffprobe,
            "-v",
            "error",
            "-show_entries",
            "format=duration:stream=codec_type,width,height",
            "-of",
            "json",
            _media_arg(path),
        ]
        try:
            result = self._run(args)
        except MediaToolError as exc:
            raise MediaFormatError(f"Unable to probe {path}: {exc}")

        try:
            data = json.loads(result.stdout)
            duration = float(data["format"]["duration"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise MediaFormatError(f"ffprobe returned no duration for {path}")
        if duration <= 0:
            raise MediaFormatError(f"Invalid duration {duration}s for {path}")

        streams = data.get("streams", [])
        video = next((s for s in streams if s.get("codec_type") == "video"), {})
        return MediaInfo(
            duration_s=duration,
            has_audio=any(s.get("codec_type") == "audio" for s in streams),
            width=int(video.get("width", 0)),
            height=int(video.get("height", 0)),
        )

    def cut(
        self,
        source: PathLike,
        window: TimeInterval,
        out_path: PathLike,
        source_info: Optional[MediaInfo] = None,
    ) -> ClipArtifact:
        """
        Re-encodes `window` of `source` into a new clip.

        Re-encoding keeps boundaries frame accurate; stream copy would snap
        to keyframes.

        Args:
            source:
                source video
            window:
                span to cut, in source coordinates
            out_path:
                destination file; parent directories are created
            source_info:
                result of an earlier `probe(source)` to skip probing again

        Returns:
            `ClipArtifact`

        Raises:
            DomainError: If `window` exceeds the source duration.
            MediaToolError: If ffmpeg fails or the clip length drifts.
        """
        info = source_info or self.probe(source)
        if window.end_ms > info.duration_ms:
            raise DomainError(
                f"Window {window!r} exceeds source duration "
                f"{format_seconds(info.duration_ms)}s of {source}."
            )

        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        args = [
            self.ffmpeg,
            "-y",
            "-v",
            "error",
            "-ss",
            format_seconds(window.start_ms),
            "-i",
            _media_arg(source),
            "-t",
            format_seconds(window.duration_ms),
            "-map",
            "0:v:0",
            "-map",
            "0:a:0?",
            "-c:v",
            self.video_codec,
            "-pix_fmt",
            "yuv420p",
            "-c:a",
            self.audio_codec,
            "-movflags",
            "+faststart",
            _media_arg(out_path),
        ]
        self._run(args)

        measured = self.probe(out_path)
        drift = abs(measured.duration_ms - window.duration_ms)
        if drift > DURATION_TOLERANCE_MS:
            raise MediaToolError(
                f"Clip {out_path} measures {measured.duration_s:.3f}s, expected "
                f"{window.duration_s:.3f}s."
            )
        return ClipArtifact(
            clip_id=out_path.stem,
            video_path=str(out_path),
            audio_path=None,
            measured_duration_s=measured.duration_s,
        )

    def extract_audio(self, source: PathLike, out_path: PathLike) -> str:
        """
        Writes the audio track of `source` as a mono 16 kHz WAV file.

        Raises:
            ModalityMissingError: If `source` has no audio track.
        """
        info = self.probe(source)
        if not info.has_audio:
            raise ModalityMissingError(f"{source} has no audio track.")
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        self._run(
            [
                self.ffmpeg,
                "-y",
                "-v",
                "error",
                "-i",
                _media_arg(source),
                "-vn",
                "-ac",
                "1",
                "-ar",
                str(AUDIO_SAMPLE_RATE),
                "-c:a",
                "pcm_s16le",
                _media_arg(out_path),
            ]
        )
        return str(out_path)

    def gen_fixture(
        self,
        duration_s: Seconds,
        with_audio: bool,
        out_path: PathLike,
        tone: bool = True,
        size: Tuple[int, int] = (320, 240),
        rate: int = 25,
    ) -> str:
        """
        Synthesizes a test-pattern video, with a sine tone or a silent
        track when `with_audio` is set.

        Raises:
            PreconditionError: If `duration_s` is not in (0, 60].
        """
        duration_ms = to_millis(duration_s)
        if not 0 < duration_ms <= MAX_FIXTURE_MS:
            raise PreconditionError(
                f"Fixture duration must be in (0, 60] seconds, got {duration_s}."
            )
        seconds = format_seconds(duration_ms)
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)

        args = [
            self.ffmpeg,
            "-y",
            "-v",
            "error",
            "-f",
            "lavfi",
            "-i",
            f"testsrc2=size={size[0]}x{size[1]}:rate={rate}:duration={seconds}",
        ]
        if with_audio:
            source = (
                f"sine=frequency=440:sample_rate={AUDIO_SAMPLE_RATE}"
                f":duration={seconds}"
                if tone
                else f"anullsrc=r={AUDIO_SAMPLE_RATE}:cl=mono"
            )
            args += ["-f", "lavfi", "-i", source]
        args += ["-t", seconds, "-c:v", self.video_codec, "-pix_fmt", "yuv420p"]
        if with_audio:
            args += ["-c:a", self.audio_codec]
        args += ["-movflags", "+faststart", _media_arg(out_path)]
        self._run(args)
        return str(out_path)


def clip_paths(clip: ClipSpec, out_dir: PathLike) -> Tuple[Path, Path]:
    """Video and audio destinations of a clip under `out_dir`."""
    base = Path(out_dir) / clip.video_id
    return base / f"{clip.clip_id}.mp4", base / f"{clip.clip_id}.wav"


def materialize_clips(
    toolchain: MediaToolchain,
    clips: Sequence[ClipSpec],
    sources: Mapping[str, Tuple[PathLike, MediaInfo]],
    out_dir: PathLike,
    extract_audio: bool = True,
    max_workers: int = 4,
) -> List[ClipRecord]:
    """
    Cuts every planned clip, at most `max_workers` ffmpeg processes at a time.

    Args:
        toolchain:
            `MediaToolchain`
        clips:
            clip plan
        sources:
            `video_id -> (media path, MediaInfo)` for every video in the plan
        out_dir:
            root of the clip layout
        extract_audio:
            also write a mono WAV for clips whose source carries audio
        max_workers:
            process cap

    Returns:
        `ClipRecord` list in plan order

    Raises:
        Any error of `MediaToolchain.cut`; the first failure in plan order wins.
    """
    if max_workers < 1:
        raise DomainError("Argument 'max_workers' must be at least 1.")

    def work(clip: ClipSpec) -> ClipRecord:
        source, info = sources[clip.video_id]
        video_path, audio_path = clip_paths(clip, out_dir)
        artifact = toolchain.cut(source, clip.window, video_path, source_info=info)
        audio = None
        if extract_audio and info.has_audio:
            audio = toolchain.extract_audio(artifact.video_path, audio_path)
        logger.debug(
            "clip materialized",
            extra={"clip_id": clip.clip_id, "video_id": clip.video_id},
        )
        return ClipRecord(spec=clip, video_path=artifact.video_path, audio_path=audio)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(work, clips))


def write_clip_records(records: Sequence[ClipRecord], path: PathLike) -> int:
    return write_jsonl((r.to_record() for r in records), path)


def read_clip_records(path: PathLike) -> List[ClipRecord]:
    return [ClipRecord.from_record(record) for _, record in iter_jsonl(path)]
