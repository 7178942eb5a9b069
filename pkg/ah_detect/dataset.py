# -*- coding: utf-8 -*-

"""
Builds multimodal instruction-tuning samples from labeled clips and emits
fine-tuning configurations.

Every dataset line has this shape (keys always in this order):

```json
{"messages": [{"role": "user", "content": "<video><audio>PROMPT"},
              {"role": "assistant", "content": "<answer>Yes</answer>"}],
 "videos": ["clips/v1/v1:0-5000.mp4"], "audios": ["clips/v1/v1:0-5000.wav"]}
```

A system message, when configured, is the first entry of `messages`.
"""

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from .errors import DomainError, PreconditionError
from .media import ClipRecord
from . import utils

POSITIVE_TARGET = "<answer>Yes</answer>"
NEGATIVE_TARGET = "<answer>No</answer>"
TARGETS = {1: POSITIVE_TARGET, 0: NEGATIVE_TARGET}


@dataclass(frozen=True)
class PromptVariant:
    variant_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.variant_id.strip():
            raise DomainError("Prompt 'variant_id' cannot be an empty string.")
        if not self.text.strip():
            raise DomainError("Prompt 'text' cannot be an empty string.")


PROMPT_REGISTRY: Dict[str, PromptVariant] = {
    p.variant_id: p
    for p in (
        PromptVariant(
            "v1",
            "Does the person in this video clip show ambivalence or hesitancy? "
            "Answer with <answer>Yes</answer> or <answer>No</answer>.",
        ),
        PromptVariant(
            "v2",
            "You are an expert in affective behavior analysis. Ambivalence or "
            "hesitancy (A/H) is a conflicted state in which a person holds "
            "positive and negative attitudes at once; it often shows as a "
            "mismatch between facial expression, tone of voice and the words "
            "spoken, or as pauses, hedging and fluctuating expressions. Watch "
            "the video and listen to the audio, then decide whether A/H is "
            "present in this clip. Reply only with <answer>Yes</answer> or "
            "<answer>No</answer>.",
        ),
    )
}


def get_prompt(variant_id: str) -> PromptVariant:
    """
    Looks up a prompt variant in the registry.

    Raises:
        DomainError: If `variant_id` is not registered.
    """
    try:
        return PROMPT_REGISTRY[variant_id]
    except KeyError:
        raise DomainError(
            f"Unknown prompt variant '{variant_id}'. "
            f"Available: {sorted(PROMPT_REGISTRY)}."
        )


def render_target(label: int) -> str:
    if label not in TARGETS:
        raise DomainError(f"Label must be 0 or 1, got {label!r}.")
    return TARGETS[label]


@dataclass(frozen=True)
class InstructionSample:
    clip_id: str
    video_ref: str
    audio_ref: Optional[str]
    prompt: PromptVariant
    target: str

    def __post_init__(self) -> None:
        if self.target not in TARGETS.values():
            raise DomainError(f"Invalid target {self.target!r}.")

    @property
    def label(self) -> int:
        return 1 if self.target == POSITIVE_TARGET else 0

    def to_record(self, system_message: Optional[str] = None) -> Dict[str, Any]:
        tags = "<video><audio>" if self.audio_ref else "<video>"
        messages = []
        if system_message:
            messages.append({"role": "system", "content": system_message})
        messages.append({"role": "user", "content": f"{tags}{self.prompt.text}"})
        messages.append({"role": "assistant", "content": self.target})
        return {
            "messages": messages,
            "videos": [self.video_ref],
            "audios": [self.audio_ref] if self.audio_ref else [],
        }


def build_sample(
    clip: ClipRecord, prompt: PromptVariant, check_files: bool = True
) -> InstructionSample:
    """
    Turns a labeled clip into an instruction-tuning sample.

    Args:
        clip:
            materialized `ClipRecord` with a label
        prompt:
            `PromptVariant` to ask
        check_files:
            verify the referenced video file exists

    Returns:
        `InstructionSample`

    Raises:
        PreconditionError: If the clip carries no label.
        FileNotFoundError: If the clip video is missing.
    """
    if clip.label is None:
        raise PreconditionError(f"Clip '{clip.clip_id}' has no label.")
    if check_files and not Path(clip.video_path).is_file():
        raise FileNotFoundError(f"Clip video not found: {clip.video_path}")
    return InstructionSample(
        clip_id=clip.clip_id,
        video_ref=clip.video_path,
        audio_ref=clip.audio_path,
        prompt=prompt,
        target=render_target(clip.label),
    )


def write_jsonl(
    samples: Sequence[InstructionSample],
    path: Union[str, Path],
    system_message: Optional[str] = None,
) -> int:
    """
    Writes samples in the conversation schema, one per line.

    Output is byte-stable for identical input and never ends in a
    truncated line.

    Returns:
        number of samples written
    """
    return utils.write_jsonl((s.to_record(system_message) for s in samples), path)


@dataclass(frozen=True)
class TrainConfig:
    strategy: str
    learning_rate: float
    epochs: int
    per_device_batch: int
    grad_accum: int
    lora_rank: Optional[int]
    lora_alpha: Optional[int]
    precision_tag: str
    flash_attention: bool
    max_length: int

    def __post_init__(self) -> None:
        has_lora = self.lora_rank is not None and self.lora_alpha is not None
        if (self.strategy == "lora") != has_lora:
            raise DomainError(
                "LoRA rank and alpha must be set exactly when strategy is 'lora'."
            )

    def to_lines(self) -> List[str]:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = f"{value:g}"
            lines.append(f"{f.name}={value}")
        return lines


_SHARED: Mapping[str, Any] = {
    "per_device_batch": 2,
    "grad_accum": 32,
    "precision_tag": "bfloat16",
    "flash_attention": True,
    "max_length": 32768,
}
FULL_EPOCHS = (2, 3)


def emit_train_config(
    strategy: str, epochs_override: Optional[int] = None
) -> TrainConfig:
    """
    Fine-tuning hyperparameters for a strategy.

    Args:
        strategy:
            `'lora'` or `'full'`
        epochs_override:
            epochs for full fine-tuning, 2 (default) or 3

    Returns:
        `TrainConfig`

    Raises:
        DomainError: On an unknown strategy or an epoch count out of range.
    """
    if strategy == "lora":
        if epochs_override not in (None, 1):
            raise DomainError("LoRA fine-tuning runs for exactly 1 epoch.")
        return TrainConfig(
            strategy="lora",
            learning_rate=1e-5,
            epochs=1,
            lora_rank=8,
            lora_alpha=32,
            **_SHARED,
        )
    if strategy == "full":
        epochs = FULL_EPOCHS[0] if epochs_override is None else epochs_override
        if epochs not in FULL_EPOCHS:
            raise DomainError(
                f"Full fine-tuning epochs must be one of {FULL_EPOCHS}, got {epochs}."
            )
        return TrainConfig(
            strategy="full",
            learning_rate=1e-6,
            epochs=epochs,
            lora_rank=None,
            lora_alpha=None,
            **_SHARED,
        )
    raise DomainError(f"Unknown fine-tuning strategy '{strategy}'.")


def write_train_config(config: TrainConfig, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(config.to_lines()) + "\n", encoding="utf-8")
