# -*- coding: utf-8 -*-

"""
Clip-level inference against one or more chat-completions endpoints.
"""

import base64
import json
import logging
import re
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .chat_api import ChatSession
from .dataset import PromptVariant
from .errors import AhDetectError, DomainError, EndpointError
from .media import ClipRecord
from .utils import iter_jsonl, write_json, write_jsonl

logger = logging.getLogger(__name__)

_ANSWER_RE = re.compile(
    r"<answer>\s*(.*?)\s*</answer>", re.IGNORECASE | re.DOTALL | re.ASCII
)
MEDIA_MODES = ("inline", "url")


class Verdict(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    ABSTAIN = "abstain"

    def render(self) -> str:
        """Canonical model output for this verdict."""
        if self is Verdict.POSITIVE:
            return "<answer>Yes</answer>"
        if self is Verdict.NEGATIVE:
            return "<answer>No</answer>"
        return ""


def parse_answer(text: str) -> Verdict:
    """
    Reads the verdict from model output.

    Only the first `<answer>...</answer>` tag counts. Tag and payload are
    matched case-insensitively and whitespace inside the tag is ignored.
    Anything other than a yes/no payload is an abstention.

    Args:
        text:
            raw generated text

    Returns:
        `Verdict`
    """
    if not isinstance(text, str):
        return Verdict.ABSTAIN
    match = _ANSWER_RE.search(text)
    if match is None:
        return Verdict.ABSTAIN
    payload = match.group(1).lower()
    if payload == "yes":
        return Verdict.POSITIVE
    if payload == "no":
        return Verdict.NEGATIVE
    return Verdict.ABSTAIN


@dataclass(frozen=True)
class ModelEndpoint:
    """
    Connection settings for one served model.

    Attributes:
        model_id:
            model name sent in requests; unique per run
        base_url:
            API root, e.g. `http://localhost:8000/v1`
        auth_token_env:
            environment variable holding the bearer token, if any
        timeout_s:
            per-request timeout
        max_retries:
            retries on transport failures and transient statuses
        backoff_base_s:
            base of the full-jitter exponential backoff
        media_mode:
            `'inline'` sends base64 data URLs, `'url'` sends `file://` URLs
        max_tokens:
            generation cap
    """

    model_id: str
    base_url: str
    auth_token_env: Optional[str] = None
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_base_s: float = 0.5
    media_mode: str = "inline"
    max_tokens: int = 16

    def __post_init__(self) -> None:
        if not self.model_id:
            raise DomainError("Endpoint 'model_id' cannot be empty.")
        if self.max_retries < 0:
            raise DomainError("Endpoint 'max_retries' must be 0 or greater.")
        if self.media_mode not in MEDIA_MODES:
            raise DomainError(
                f"Endpoint 'media_mode' must be one of {MEDIA_MODES}, "
                f"got '{self.media_mode}'."
            )

    def open_session(self, pool_size: int = 10) -> ChatSession:
        return ChatSession(
            self.base_url,
            auth_token_env=self.auth_token_env,
            timeout=self.timeout_s,
            totalRetries=self.max_retries,
            backoffFactor=self.backoff_base_s,
            poolSize=pool_size,
        )


@dataclass(frozen=True)
class ClipPrediction:
    clip_id: str
    model_id: str
    verdict: Verdict
    raw_text: str
    latency_ms: int

    def to_record(self) -> Dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "model_id": self.model_id,
            "verdict": self.verdict.value,
            "raw_text": self.raw_text,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "ClipPrediction":
        return cls(
            clip_id=record["clip_id"],
            model_id=record["model_id"],
            verdict=Verdict(record["verdict"]),
            raw_text=record["raw_text"],
            latency_ms=int(record["latency_ms"]),
        )


@dataclass(frozen=True)
class ClipFailure:
    clip_id: str
    model_id: str
    error: str
    detail: str

    def to_record(self) -> Dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "model_id": self.model_id,
            "error": self.error,
            "detail": self.detail,
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "ClipFailure":
        return cls(
            clip_id=record["clip_id"],
            model_id=record["model_id"],
            error=record["error"],
            detail=record["detail"],
        )


@dataclass
class PredictionSet:
    """Batch outcome: per model `clip_id -> ClipPrediction`, plus failures."""

    predictions: Dict[str, Dict[str, ClipPrediction]] = field(
        default_factory=dict
    )
    failures: List[ClipFailure] = field(default_factory=list)

    @property
    def prediction_count(self) -> int:
        return sum(len(p) for p in self.predictions.values())


def _data_url(path: Union[str, Path], mime: str) -> str:
    with open(path, "rb") as fh:
        encoded = base64.b64encode(fh.read()).decode("ascii")
    return f"data:{mime};base64,{encoded}"


def build_messages(
    clip: ClipRecord, prompt: PromptVariant, media_mode: str = "inline"
) -> List[Dict[str, Any]]:
    """
    User message carrying the clip video, its audio when present, and the
    prompt text.

    Raises:
        FileNotFoundError: If a referenced media file is missing.
    """
    paths: List[Tuple[str, str, str]] = [
        ("video_url", clip.video_path, "video/mp4")
    ]
    if clip.audio_path:
        paths.append(("audio_url", clip.audio_path, "audio/wav"))

    content: List[Dict[str, Any]] = []
    for part, path, mime in paths:
        if not Path(path).is_file():
            raise FileNotFoundError(f"Clip media not found: {path}")
        if media_mode == "inline":
            url = _data_url(path, mime)
        else:
            url = Path(path).resolve().as_uri()
        content.append({"type": part, part: {"url": url}})
    content.append({"type": "text", "text": prompt.text})
    return [{"role": "user", "content": content}]


def _response_text(response: Any) -> str:
    try:
        message = response.json()["choices"][0]["message"]
    except (ValueError, KeyError, IndexError, TypeError):
        message = None
    if not isinstance(message, dict):
        raise EndpointError(
            "Malformed chat completion response.", status_code=response.status_code
        )
    content = message.get("content")
    if isinstance(content, list):
        return "".join(
            part["text"]
            for part in content
            if isinstance(part, dict) and isinstance(part.get("text"), str)
        )
    return content if isinstance(content, str) else ""


def predict_clip(
    endpoint: ModelEndpoint,
    clip: ClipRecord,
    prompt: PromptVariant,
    session: Optional[ChatSession] = None,
) -> ClipPrediction:
    """
    Asks one endpoint about one clip.

    Transport failures and transient statuses are retried by the session
    (`endpoint.max_retries`, full-jitter exponential backoff).

    Args:
        endpoint:
            `ModelEndpoint`
        clip:
            materialized `ClipRecord`
        prompt:
            `PromptVariant`
        session:
            open `ChatSession` to reuse; a new one is opened otherwise

    Returns:
        `ClipPrediction`

    Raises:
        TransportError: If the endpoint stays unreachable.
        EndpointError: If the endpoint answers with an error status.
    """
    messages = build_messages(clip, prompt, endpoint.media_mode)
    owned = session is None
    active = session or endpoint.open_session(pool_size=1)
    try:
        started = time.perf_counter()
        response = active.chat_completion(
            endpoint.model_id,
            messages,
            temperature=0.0,
            max_tokens=endpoint.max_tokens,
            requestId=clip.clip_id,
        )
        latency_ms = int(round((time.perf_counter() - started) * 1000))
        text = _response_text(response)
    finally:
        if owned:
            active.close()

    verdict = parse_answer(text)
    if verdict is Verdict.ABSTAIN:
        logger.info(
            "no well-formed answer",
            extra={"clip_id": clip.clip_id, "model_id": endpoint.model_id},
        )
    return ClipPrediction(
        clip_id=clip.clip_id,
        model_id=endpoint.model_id,
        verdict=verdict,
        raw_text=text,
        latency_ms=latency_ms,
    )


def run_batch(
    clips: Sequence[ClipRecord],
    endpoints: Sequence[ModelEndpoint],
    prompt: PromptVariant,
    max_in_flight: int = 4,
) -> PredictionSet:
    """
    Runs every clip against every endpoint concurrently.

    Each endpoint gets its own session and worker pool, so no more than
    `max_in_flight` requests are outstanding per endpoint. A failing pair is
    recorded in the failure ledger and the batch goes on.

    Args:
        clips:
            clips with unique ids
        endpoints:
            endpoints with unique model ids
        prompt:
            `PromptVariant`
        max_in_flight:
            per-endpoint concurrency cap

    Returns:
        `PredictionSet`

    Raises:
        DomainError: If `max_in_flight` < 1 or ids are not unique.
    """
    if max_in_flight < 1:
        raise DomainError("Argument 'max_in_flight' must be at least 1.")
    clip_ids = [c.clip_id for c in clips]
    if len(set(clip_ids)) != len(clip_ids):
        raise DomainError("Clip ids in a batch must be unique.")
    model_ids = [e.model_id for e in endpoints]
    if len(set(model_ids)) != len(model_ids):
        raise DomainError("Endpoint model ids in a batch must be unique.")
    if len({model_filename(m) for m in model_ids}) != len(model_ids):
        raise DomainError(
            "Endpoint model ids in a batch must map to distinct file names."
        )

    result = PredictionSet(predictions={m: {} for m in model_ids})
    lock = threading.Lock()
    sessions = [e.open_session(pool_size=max_in_flight) for e in endpoints]
    pools = [ThreadPoolExecutor(max_workers=max_in_flight) for _ in endpoints]
    futures: Dict[Future, Tuple[ModelEndpoint, ClipRecord]] = {}
    try:
        for endpoint, session, pool in zip(endpoints, sessions, pools):
            for clip in clips:
                future = pool.submit(predict_clip, endpoint, clip, prompt, session)
                futures[future] = (endpoint, clip)

        for future in as_completed(futures):
            endpoint, clip = futures[future]
            try:
                prediction = future.result()
            except Exception as exc:
                failure = ClipFailure(
                    clip_id=clip.clip_id,
                    model_id=endpoint.model_id,
                    error=type(exc).__name__,
                    detail=str(exc),
                )
                logger.warning(
                    "clip prediction failed",
                    # unexpected errors keep their traceback
                    exc_info=not isinstance(exc, (AhDetectError, OSError)),
                    extra={
                        "clip_id": clip.clip_id,
                        "model_id": endpoint.model_id,
                        "error": failure.error,
                    },
                )
                with lock:
                    result.failures.append(failure)
                continue
            with lock:
                result.predictions[endpoint.model_id][clip.clip_id] = prediction
    finally:
        for pool in pools:
            pool.shutdown(wait=True)
        for session in sessions:
            session.close()

    result.failures.sort(key=lambda f: (f.model_id, f.clip_id))
    return result


MODEL_INDEX = "models.json"


def model_filename(model_id: str) -> str:
    """File stem for a model id; `/` in served model names becomes `__`."""
    return model_id.replace("/", "__")


def model_id_from_filename(stem: str) -> str:
    """Best guess at the model id behind a stem written without an index."""
    return stem.replace("__", "/")


def write_model_index(model_ids: Iterable[str], out_dir: Union[str, Path]) -> None:
    """
    Records which model id each `{stem}.jsonl` under `out_dir` belongs to,
    since `model_filename` is not reversible on its own.

    Raises:
        DomainError: If two model ids map to the same file stem.
    """
    index: Dict[str, str] = {}
    for model_id in sorted(model_ids):
        stem = model_filename(model_id)
        if stem in index:
            raise DomainError(
                f"Model ids '{index[stem]}' and '{model_id}' share the file "
                f"name '{stem}.jsonl'."
            )
        index[stem] = model_id
    write_json(index, Path(out_dir) / MODEL_INDEX)


def model_ids_in(
    out_dir: Union[str, Path], exclude: Iterable[str] = ()
) -> Dict[str, str]:
    """
    `stem -> model_id` for every `*.jsonl` under `out_dir` whose stem is not
    in `exclude`, resolved through the model index when there is one.
    """
    out_dir = Path(out_dir)
    index_path = out_dir / MODEL_INDEX
    index: Dict[str, str] = {}
    if index_path.is_file():
        index = json.loads(index_path.read_text(encoding="utf-8"))
    skipped = set(exclude)
    return {
        p.stem: index.get(p.stem, model_id_from_filename(p.stem))
        for p in sorted(out_dir.glob("*.jsonl"))
        if p.stem not in skipped
    }


def write_predictions(
    prediction_set: PredictionSet, out_dir: Union[str, Path]
) -> None:
    """
    Writes `{model_id}.jsonl` per model (sorted by clip id), `failures.jsonl`
    and the model index under `out_dir`.
    """
    out_dir = Path(out_dir)
    write_model_index(prediction_set.predictions, out_dir)
    for model_id, by_clip in prediction_set.predictions.items():
        write_jsonl(
            (by_clip[k].to_record() for k in sorted(by_clip)),
            out_dir / f"{model_filename(model_id)}.jsonl",
        )
    write_jsonl(
        (f.to_record() for f in prediction_set.failures),
        out_dir / "failures.jsonl",
    )


def read_predictions(
    out_dir: Union[str, Path], model_ids: Iterable[str]
) -> PredictionSet:
    out_dir = Path(out_dir)
    result = PredictionSet()
    for model_id in model_ids:
        result.predictions[model_id] = {
            record["clip_id"]: ClipPrediction.from_record(record)
            for _, record in iter_jsonl(
                out_dir / f"{model_filename(model_id)}.jsonl"
            )
        }
    failures_path = out_dir / "failures.jsonl"
    if failures_path.exists():
        result.failures = [
            ClipFailure.from_record(record) for _, record in iter_jsonl(failures_path)
        ]
    return result
