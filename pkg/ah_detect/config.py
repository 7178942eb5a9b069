# -*- coding: utf-8 -*-

"""
Run configuration: one YAML document, environment overrides and
command-line overrides.

```yaml
manifest: data/train.jsonl
test_manifest: data/test.jsonl
work_dir: work
segmentation:
  clip_len_s: 5
  min_tail_s: 1
prompt_variant: v2
strategies: [lora, full]
endpoints:
  - model_id: omni-lora
    base_url: http://localhost:8000/v1
    auth_token_env: OMNI_TOKEN
max_in_flight: 4
```
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import yaml

from .dataset import FULL_EPOCHS, PromptVariant, get_prompt
from .errors import ConfigError, DomainError
from .evaluation import ABSTAIN_POLICIES, TIE_POLICIES
from .inference import ModelEndpoint
from .media import MediaToolchain
from .segmenter import SegmentationPolicy

PathLike = Union[str, Path]

STRATEGIES = ("lora", "full")
WORK_DIR_ENV = "AH_DETECT_WORK_DIR"

_TOP_LEVEL_KEYS = {
    "manifest",
    "test_manifest",
    "work_dir",
    "media_out_dir",
    "dataset_out",
    "segmentation",
    "prompt_variant",
    "system_message",
    "strategies",
    "full_epochs",
    "endpoints",
    "max_in_flight",
    "tie_policy",
    "abstain_policy",
    "seed",
    "media",
}


@dataclass(frozen=True)
class MediaSettings:
    ffmpeg: str = "ffmpeg"
    ffprobe: str = "ffprobe"
    video_codec: str = "libx264"
    audio_codec: str = "aac"
    process_cap: int = 4
    extract_audio: bool = True
    timeout_s: float = 600.0

    def toolchain(self) -> MediaToolchain:
        return MediaToolchain(
            ffmpeg=self.ffmpeg,
            ffprobe=self.ffprobe,
            video_codec=self.video_codec,
            audio_codec=self.audio_codec,
            timeout_s=self.timeout_s,
        )


@dataclass(frozen=True)
class RunConfig:
    """
    Everything one pipeline run needs. Outputs without an explicit location
    live under `work_dir`.
    """

    work_dir: Path
    manifest_path: Optional[Path] = None
    test_manifest_path: Optional[Path] = None
    media_out_dir: Optional[Path] = None
    dataset_out_path: Optional[Path] = None
    policy: SegmentationPolicy = SegmentationPolicy(rescue_empty=True)
    prompt_variant_id: str = "v1"
    system_message: Optional[str] = None
    strategies: Tuple[str, ...] = STRATEGIES
    full_epochs: int = FULL_EPOCHS[0]
    endpoints: Tuple[ModelEndpoint, ...] = ()
    max_in_flight: int = 4
    tie_policy: str = "positive"
    abstain_policy: str = "negative"
    seed: int = 0
    media: MediaSettings = field(default_factory=MediaSettings)

    def __post_init__(self) -> None:
        work_dir = Path(self.work_dir)
        object.__setattr__(self, "work_dir", work_dir)
        if self.media_out_dir is None:
            object.__setattr__(self, "media_out_dir", work_dir / "clips")
        if self.dataset_out_path is None:
            object.__setattr__(self, "dataset_out_path", work_dir / "dataset.jsonl")
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ConfigError: If settings are inconsistent.
        """
        get_prompt_or_fail(self.prompt_variant_id)
        for strategy in self.strategies:
            if strategy not in STRATEGIES:
                raise ConfigError(
                    f"Unknown strategy '{strategy}'; expected one of {STRATEGIES}."
                )
        if self.full_epochs not in FULL_EPOCHS:
            raise ConfigError(f"'full_epochs' must be one of {FULL_EPOCHS}.")
        if self.max_in_flight < 1:
            raise ConfigError("'max_in_flight' must be at least 1.")
        if self.media.process_cap < 1:
            raise ConfigError("'media.process_cap' must be at least 1.")
        if self.tie_policy not in TIE_POLICIES:
            raise ConfigError(f"'tie_policy' must be one of {TIE_POLICIES}.")
        if self.abstain_policy not in ABSTAIN_POLICIES:
            raise ConfigError(f"'abstain_policy' must be one of {ABSTAIN_POLICIES}.")

        model_ids = [e.model_id for e in self.endpoints]
        duplicates = sorted({m for m in model_ids if model_ids.count(m) > 1})
        if duplicates:
            raise ConfigError(f"Endpoint model ids must be unique: {duplicates}.")

        inputs = {
            "manifest": self.manifest_path,
            "test_manifest": self.test_manifest_path,
        }
        outputs = {
            "media_out_dir": self.media_out_dir,
            "dataset_out": self.dataset_out_path,
            "test_media_dir": self.test_media_dir,
            "report": self.report_path,
        }
        seen: Dict[Path, str] = {}
        for name, path in outputs.items():
            resolved = Path(path).resolve()  # type: ignore[arg-type]
            if resolved in seen:
                raise ConfigError(
                    f"'{name}' and '{seen[resolved]}' point to the same path: {path}"
                )
            seen[resolved] = name
        for name, path in inputs.items():
            if path is not None and Path(path).resolve() in seen:
                raise ConfigError(
                    f"Output '{seen[Path(path).resolve()]}' would overwrite "
                    f"'{name}': {path}"
                )

    # derived locations
    @property
    def plan_path(self) -> Path:
        return self.work_dir / "plan.jsonl"

    @property
    def clips_path(self) -> Path:
        return self.work_dir / "clips.jsonl"

    @property
    def diagnostics_path(self) -> Path:
        return self.work_dir / "diagnostics.jsonl"

    @property
    def train_config_dir(self) -> Path:
        return self.work_dir / "train"

    @property
    def test_plan_path(self) -> Path:
        return self.work_dir / "test_plan.jsonl"

    @property
    def test_clips_path(self) -> Path:
        return self.work_dir / "test_clips.jsonl"

    @property
    def test_media_dir(self) -> Path:
        return self.work_dir / "test_clips"

    @property
    def predictions_dir(self) -> Path:
        return self.work_dir / "predictions"

    @property
    def videos_dir(self) -> Path:
        return self.work_dir / "videos"

    @property
    def report_path(self) -> Path:
        return self.work_dir / "report.json"

    @property
    def prompt(self) -> PromptVariant:
        return get_prompt(self.prompt_variant_id)

    def require_manifest(self, test: bool = False) -> Path:
        path = self.test_manifest_path if test else self.manifest_path
        if path is None:
            key = "test_manifest" if test else "manifest"
            raise ConfigError(f"No '{key}' configured.")
        return path

    def require_endpoints(self) -> Tuple[ModelEndpoint, ...]:
        if not self.endpoints:
            raise ConfigError("Inference needs at least one endpoint configured.")
        return self.endpoints

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with the non-`None` overrides applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        if "work_dir" in changes:
            # outputs derived from the old work dir follow the new one
            for name, default in (
                ("media_out_dir", "clips"),
                ("dataset_out_path", "dataset.jsonl"),
            ):
                if getattr(self, name) == self.work_dir / default:
                    changes.setdefault(name, None)
        return replace(self, **changes)


def get_prompt_or_fail(variant_id: str) -> PromptVariant:
    try:
        return get_prompt(variant_id)
    except DomainError as exc:
        raise ConfigError(str(exc))


def _section(raw: Mapping[str, Any], key: str) -> Dict[str, Any]:
    value = raw.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a mapping.")
    return dict(value)


def _path(value: Any, base: Path) -> Optional[Path]:
    if value is None:
        return None
    path = Path(os.path.expanduser(str(value)))
    return path if path.is_absolute() else base / path


def _integer(raw: Mapping[str, Any], key: str, default: int) -> int:
    value = raw.get(key, default)
    invalid = ConfigError(f"'{key}' must be an integer, got {value!r}.")
    if isinstance(value, bool):
        raise invalid
    if isinstance(value, float) and not value.is_integer():
        raise invalid
    try:
        return int(value)
    except (TypeError, ValueError):
        raise invalid


def _endpoint(raw: Any, index: int) -> ModelEndpoint:
    if not isinstance(raw, dict):
        raise ConfigError(f"endpoints[{index}] must be a mapping.")
    try:
        return ModelEndpoint(**raw)
    except TypeError as exc:
        raise ConfigError(f"endpoints[{index}]: {exc}")
    except DomainError as exc:
        raise ConfigError(f"endpoints[{index}]: {exc}")


def parse_config(raw: Mapping[str, Any], base_dir: PathLike = ".") -> RunConfig:
    """
    Builds a `RunConfig` from a parsed configuration document.

    Args:
        raw:
            configuration mapping
        base_dir:
            directory relative paths are resolved against

    Returns:
        `RunConfig`

    Raises:
        ConfigError: On unknown keys or invalid values.
    """
    if not isinstance(raw, dict):
        raise ConfigError("Configuration must be a mapping.")
    unknown = sorted(set(raw) - _TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {unknown}.")

    base = Path(base_dir)
    work_dir = os.environ.get(WORK_DIR_ENV) or raw.get("work_dir") or "work"
    segmentation = _section(raw, "segmentation")
    # test videos must never vanish from the plan
    segmentation.setdefault("rescue_empty", True)
    media = _section(raw, "media")
    endpoints = raw.get("endpoints") or []
    if not isinstance(endpoints, list):
        raise ConfigError("'endpoints' must be a list.")

    try:
        policy = SegmentationPolicy.from_seconds(**segmentation)
        media_settings = MediaSettings(**media)
    except (TypeError, DomainError) as exc:
        raise ConfigError(str(exc))

    strategies = raw.get("strategies", STRATEGIES)
    if isinstance(strategies, str):
        strategies = [strategies]

    return RunConfig(
        work_dir=_path(work_dir, base),  # type: ignore[arg-type]
        manifest_path=_path(raw.get("manifest"), base),
        test_manifest_path=_path(raw.get("test_manifest"), base),
        media_out_dir=_path(raw.get("media_out_dir"), base),
        dataset_out_path=_path(raw.get("dataset_out"), base),
        policy=policy,
        prompt_variant_id=str(raw.get("prompt_variant", "v1")),
        system_message=raw.get("system_message"),
        strategies=tuple(strategies),
        full_epochs=_integer(raw, "full_epochs", FULL_EPOCHS[0]),
        endpoints=tuple(_endpoint(e, i) for i, e in enumerate(endpoints)),
        max_in_flight=_integer(raw, "max_in_flight", 4),
        tie_policy=raw.get("tie_policy", "positive"),
        abstain_policy=raw.get("abstain_policy", "negative"),
        seed=_integer(raw, "seed", 0),
        media=media_settings,
    )


def load_config(path: Optional[PathLike] = None) -> RunConfig:
    """
    Reads a YAML run configuration. Without a file all defaults apply and
    relative paths resolve against the current directory.

    Raises:
        FileNotFoundError: If `path` does not exist.
        ConfigError: If the document is not valid YAML or holds invalid values.
    """
    if path is None:
        return parse_config({}, Path.cwd())
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Configuration file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in {path}: {exc}")
    return parse_config(raw or {}, path.parent)
