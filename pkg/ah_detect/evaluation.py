# -*- coding: utf-8 -*-

"""
Video-level aggregation, majority voting across models, and classification
metrics.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Any,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .errors import CoverageError, DomainError, PreconditionError, TieError
from .inference import ClipPrediction, Verdict
from .utils import iter_jsonl, write_jsonl

logger = logging.getLogger(__name__)

ENSEMBLE_ID = "ensemble"
TIE_POLICIES = ("positive", "negative", "error")
ABSTAIN_POLICIES = ("negative", "strict")


def _check_label(value: Any, name: str = "label") -> int:
    if isinstance(value, bool) or value not in (0, 1):
        raise DomainError(f"Argument '{name}' must be 0 or 1, got {value!r}.")
    return int(value)


def _check_tie_policy(tie_policy: str) -> None:
    if tie_policy not in TIE_POLICIES:
        raise DomainError(
            f"Argument 'tie_policy' must be one of {TIE_POLICIES}, got '{tie_policy}'."
        )


@dataclass(frozen=True)
class VideoPrediction:
    """
    Video-level prediction of one model, or of the ensemble.

    Attributes:
        video_id:
            source video
        label:
            predicted label
        clip_count:
            number of clips the video was split into
        positive_clips:
            clips predicted positive; for ensemble rows the largest count
            among the member models
        model_id:
            producing model, or `'ensemble'`
        votes:
            ensemble rows only: member labels in model id order
    """

    video_id: str
    label: int
    clip_count: int
    positive_clips: int
    model_id: str
    votes: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        _check_label(self.label)
        if self.clip_count < 1:
            raise DomainError("Video 'clip_count' must be at least 1.")
        if not 0 <= self.positive_clips <= self.clip_count:
            raise DomainError(
                "Video 'positive_clips' must be between 0 and 'clip_count'."
            )
        if not self.votes and self.label != int(self.positive_clips >= 1):
            raise DomainError(
                f"Video '{self.video_id}' label disagrees with its positive clips."
            )

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "video_id": self.video_id,
            "model_id": self.model_id,
            "label": self.label,
            "clip_count": self.clip_count,
            "positive_clips": self.positive_clips,
        }
        if self.votes:
            record["votes"] = list(self.votes)
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "VideoPrediction":
        return cls(
            video_id=record["video_id"],
            label=record["label"],
            clip_count=record["clip_count"],
            positive_clips=record["positive_clips"],
            model_id=record["model_id"],
            votes=tuple(record.get("votes", ())),
        )


def aggregate_video(
    video_id: str, clip_verdicts: Sequence[int], model_id: str = ""
) -> VideoPrediction:
    """
    Max rule: a video is positive as soon as one of its clips is.

    Args:
        video_id:
            source video
        clip_verdicts:
            per-clip labels, abstentions already mapped
        model_id:
            producing model

    Returns:
        `VideoPrediction`

    Raises:
        PreconditionError: If `clip_verdicts` is empty.
    """
    if not clip_verdicts:
        raise PreconditionError(f"Video '{video_id}' has no clip verdicts.")
    labels = [_check_label(v, "clip_verdicts") for v in clip_verdicts]
    positives = sum(labels)
    return VideoPrediction(
        video_id=video_id,
        label=max(labels),
        clip_count=len(labels),
        positive_clips=positives,
        model_id=model_id,
    )


@dataclass
class ModelAggregate:
    """
    Video predictions of one model together with the clips that did not
    yield a usable verdict.
    """

    model_id: str
    videos: Dict[str, VideoPrediction] = field(default_factory=dict)
    abstained_clips: List[str] = field(default_factory=list)
    failed_clips: List[str] = field(default_factory=list)
    unresolved_videos: List[str] = field(default_factory=list)

    @property
    def labels(self) -> Dict[str, int]:
        return {k: v.label for k, v in self.videos.items()}


def aggregate_model(
    model_id: str,
    clips: Iterable[Any],
    predictions: Mapping[str, ClipPrediction],
    abstain_policy: str = "negative",
) -> ModelAggregate:
    """
    Applies the max rule to every video of a clip plan for one model.

    Under the `negative` policy an abstention or a clip without prediction
    counts as a negative clip. Under `strict` such a video is left out of
    `videos` and listed in `unresolved_videos`.

    Args:
        model_id:
            model whose predictions are aggregated
        clips:
            planned clips (anything with `clip_id` and `video_id`)
        predictions:
            `clip_id -> ClipPrediction` for this model
        abstain_policy:
            `'negative'` or `'strict'`

    Returns:
        `ModelAggregate`
    """
    if abstain_policy not in ABSTAIN_POLICIES:
        raise DomainError(
            f"Argument 'abstain_policy' must be one of {ABSTAIN_POLICIES}, "
            f"got '{abstain_policy}'."
        )

    by_video: Dict[str, List[str]] = {}
    for clip in clips:
        by_video.setdefault(clip.video_id, []).append(clip.clip_id)

    result = ModelAggregate(model_id=model_id)
    for video_id in sorted(by_video):
        verdicts = []
        unresolved = False
        for clip_id in by_video[video_id]:
            prediction = predictions.get(clip_id)
            if prediction is None:
                result.failed_clips.append(clip_id)
                unresolved = True
                verdicts.append(0)
            elif prediction.verdict is Verdict.ABSTAIN:
                result.abstained_clips.append(clip_id)
                unresolved = True
                verdicts.append(0)
            else:
                verdicts.append(int(prediction.verdict is Verdict.POSITIVE))

        if unresolved and abstain_policy == "strict":
            result.unresolved_videos.append(video_id)
            logger.warning(
                "video left unresolved",
                extra={"video_id": video_id, "model_id": model_id},
            )
            continue
        result.videos[video_id] = aggregate_video(video_id, verdicts, model_id)
    return result


def majority_vote(per_model_labels: Sequence[int], tie_policy: str = "positive") -> int:
    """
    Returns the label held by strictly more than half of the models.

    Args:
        per_model_labels:
            one label per model
        tie_policy:
            `'positive'` (default), `'negative'` or `'error'`

    Returns:
        0 or 1

    Raises:
        PreconditionError: If `per_model_labels` is empty.
        TieError: On an exact tie under the `'error'` policy.
    """
    _check_tie_policy(tie_policy)
    if not per_model_labels:
        raise PreconditionError("Cannot vote over an empty list of labels.")
    labels = [_check_label(v, "per_model_labels") for v in per_model_labels]
    positives = sum(labels)
    negatives = len(labels) - positives
    if positives > negatives:
        return 1
    if negatives > positives:
        return 0
    if tie_policy == "error":
        raise TieError(f"Vote tied at {positives}-{negatives}.")
    return 1 if tie_policy == "positive" else 0


def ensemble(
    per_model: Mapping[str, Mapping[str, VideoPrediction]],
    tie_policy: str = "positive",
) -> Dict[str, VideoPrediction]:
    """
    Fuses per-model video predictions by majority vote.

    Args:
        per_model:
            `model_id -> {video_id -> VideoPrediction}`; every model must
            cover the same videos
        tie_policy:
            see `majority_vote`

    Returns:
        `video_id -> VideoPrediction` with `model_id='ensemble'`

    Raises:
        CoverageError: If models cover different videos.
    """
    _check_tie_policy(tie_policy)
    if not per_model:
        raise PreconditionError("Cannot build an ensemble without models.")
    model_ids = sorted(per_model)
    reference = set(per_model[model_ids[0]])
    for model_id in model_ids[1:]:
        videos = set(per_model[model_id])
        if videos != reference:
            raise CoverageError(reference - videos, videos - reference)

    fused = {}
    for video_id in sorted(reference):
        members = [per_model[m][video_id] for m in model_ids]
        votes = tuple(p.label for p in members)
        fused[video_id] = VideoPrediction(
            video_id=video_id,
            label=majority_vote(votes, tie_policy),
            clip_count=max(p.clip_count for p in members),
            positive_clips=max(p.positive_clips for p in members),
            model_id=ENSEMBLE_ID,
            votes=votes,
        )
    return fused


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise DomainError(f"Count '{name}' must be a non-negative integer.")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_labels(
        cls, predictions: Mapping[str, int], ground_truth: Mapping[str, int]
    ) -> "ConfusionCounts":
        tp = fp = fn = tn = 0
        for video_id, truth in ground_truth.items():
            predicted = _check_label(predictions[video_id], "predictions")
            truth = _check_label(truth, "ground_truth")
            if predicted and truth:
                tp += 1
            elif predicted:
                fp += 1
            elif truth:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)


@dataclass(frozen=True)
class MetricsReport:
    """
    Accuracy, precision, recall and F1. A metric whose denominator is zero
    is reported as 0 with its `undefined_*` flag set.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined_precision: bool
    undefined_recall: bool
    counts: ConfusionCounts = ConfusionCounts()

    @classmethod
    def from_counts(cls, counts: ConfusionCounts) -> "MetricsReport":
        predicted_pos = counts.tp + counts.fp
        actual_pos = counts.tp + counts.fn
        precision = counts.tp / predicted_pos if predicted_pos else 0.0
        recall = counts.tp / actual_pos if actual_pos else 0.0
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        accuracy = (counts.tp + counts.tn) / counts.total if counts.total else 0.0
        return cls(
            accuracy=accuracy,
            precision=precision,
            recall=recall,
            f1=f1,
            undefined_precision=predicted_pos == 0,
            undefined_recall=actual_pos == 0,
            counts=counts,
        )

    def to_record(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "undefined_precision": self.undefined_precision,
            "undefined_recall": self.undefined_recall,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
            "tn": self.counts.tn,
        }


def compute_metrics(
    predictions: Mapping[str, int], ground_truth: Mapping[str, int]
) -> MetricsReport:
    """
    Scores video-level predictions against ground truth.

    Args:
        predictions:
            `video_id -> label`
        ground_truth:
            `video_id -> label`

    Returns:
        `MetricsReport`

    Raises:
        CoverageError: If the two mappings do not hold the same video ids.
    """
    missing = set(ground_truth) - set(predictions)
    extra = set(predictions) - set(ground_truth)
    if missing or extra:
        raise CoverageError(missing, extra)
    return MetricsReport.from_counts(
        ConfusionCounts.from_labels(predictions, ground_truth)
    )


def _check_accuracies(per_model_accuracy: Sequence[float]) -> List[float]:
    if not per_model_accuracy:
        raise DomainError("Argument 'per_model_accuracy' cannot be empty.")
    checked = []
    for p in per_model_accuracy:
        if isinstance(p, bool) or not isinstance(p, (int, float)):
            raise DomainError(f"Model accuracy must be a number, got {p!r}.")
        if not math.isfinite(p) or not 0 < p <= 1:
            raise DomainError(f"Model accuracy must be in (0, 1], got {p}.")
        checked.append(float(p))
    return checked


def simulate_ensemble(
    per_model_accuracy: Sequence[float],
    n_videos: int,
    seed: int,
    tie_policy: str = "positive",
) -> float:
    """
    Monte Carlo estimate of majority-vote accuracy for independent models.

    Every simulated video gets a balanced random label; each model is right
    about it with its own accuracy, independently of the others.

    Args:
        per_model_accuracy:
            accuracy of each model, in (0, 1]
        n_videos:
            number of simulated videos
        seed:
            random seed; equal seeds give equal results
        tie_policy:
            see `majority_vote`

    Returns:
        fraction of videos the vote gets right
    """
    accuracies = np.array(_check_accuracies(per_model_accuracy))
    _check_tie_policy(tie_policy)
    if isinstance(n_videos, bool) or not isinstance(n_videos, int) or n_videos < 1:
        raise DomainError("Argument 'n_videos' must be a positive integer.")

    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 2, size=n_videos)
    correct = rng.random((accuracies.size, n_videos)) < accuracies[:, None]
    labels = np.where(correct, truth, 1 - truth)
    positives = labels.sum(axis=0)
    negatives = accuracies.size - positives

    ties = positives == negatives
    if tie_policy == "error" and ties.any():
        raise TieError(f"{int(ties.sum())} simulated votes tied.")
    tie_label = 1 if tie_policy == "positive" else 0
    voted = np.where(positives > negatives, 1, np.where(ties, tie_label, 0))
    return float(np.mean(voted == truth))


def expected_vote_accuracy(
    per_model_accuracy: Sequence[float], tie_policy: str = "positive"
) -> float:
    """
    Exact majority-vote accuracy for independent models, by enumeration of
    every right/wrong pattern. A tie is right half of the time since the
    simulated labels are balanced.
    """
    accuracies = _check_accuracies(per_model_accuracy)
    _check_tie_policy(tie_policy)
    k = len(accuracies)
    if tie_policy == "error" and k % 2 == 0:
        raise TieError("Ties are possible with an even number of models.")

    total = 0.0
    for pattern in itertools.product((True, False), repeat=k):
        prob = 1.0
        for right, p in zip(pattern, accuracies):
            prob *= p if right else 1 - p
        right_votes = sum(pattern)
        if 2 * right_votes > k:
            total += prob
        elif 2 * right_votes == k:
            total += prob / 2
    return total


def build_report(
    aggregates: Sequence[ModelAggregate],
    ground_truth: Mapping[str, int],
    tie_policy: str = "positive",
    abstain_policy: str = "negative",
) -> Dict[str, Any]:
    """
    Assembles a JSON-ready report with one row per model and an ensemble row.

    Videos any model left unresolved are excluded from every row so that
    all rows are scored on the same videos.

    Args:
        aggregates:
            one `ModelAggregate` per model
        ground_truth:
            `video_id -> label`
        tie_policy:
            ensemble tie policy
        abstain_policy:
            policy the aggregates were built with; echoed in the report

    Returns:
        report dictionary
    """
    unresolved = sorted({v for a in aggregates for v in a.unresolved_videos})
    scored = {k: v for k, v in ground_truth.items() if k not in unresolved}

    rows = []
    per_model: Dict[str, Dict[str, VideoPrediction]] = {}
    for aggregate in sorted(aggregates, key=lambda a: a.model_id):
        videos = {k: v for k, v in aggregate.videos.items() if k in scored}
        per_model[aggregate.model_id] = videos
        metrics = compute_metrics({k: v.label for k, v in videos.items()}, scored)
        rows.append({"model_id": aggregate.model_id, **metrics.to_record()})

    if per_model:
        fused = ensemble(per_model, tie_policy)
        metrics = compute_metrics({k: v.label for k, v in fused.items()}, scored)
        rows.append({"model_id": ENSEMBLE_ID, **metrics.to_record()})

    notes = []
    if abstain_policy == "negative":
        notes.append(
            "Model outputs without a well-formed answer tag were counted as "
            "negative clips."
        )
    return {
        "videos": len(scored),
        "tie_policy": tie_policy,
        "abstain_policy": abstain_policy,
        "rows": rows,
        "abstained_clips": sum(len(a.abstained_clips) for a in aggregates),
        "failed_clips": sum(len(a.failed_clips) for a in aggregates),
        "unresolved_videos": unresolved,
        "notes": notes,
    }


def _percent(value: float, undefined: bool = False) -> str:
    return f"{value * 100:.1f}%" + ("*" if undefined else "")


def format_table(report: Mapping[str, Any]) -> str:
    """Renders the report rows as a plain-text table, metrics in percent."""
    header = ("Model", "Accuracy", "Precision", "Recall", "F1")
    body = [
        (
            row["model_id"],
            _percent(row["accuracy"]),
            _percent(row["precision"], row["undefined_precision"]),
            _percent(row["recall"], row["undefined_recall"]),
            _percent(row["f1"]),
        )
        for row in report["rows"]
    ]
    table = [header, *body]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for cells in table:
        first, *rest = cells
        padded = [first.ljust(widths[0])]
        padded.extend(c.rjust(w) for c, w in zip(rest, widths[1:]))
        lines.append("  ".join(padded).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    if any(r["undefined_precision"] or r["undefined_recall"] for r in report["rows"]):
        lines.append("* undefined, reported as 0")
    return "\n".join(lines)


def write_video_predictions(
    predictions: Mapping[str, VideoPrediction], path: Union[str, Path]
) -> int:
    return write_jsonl((predictions[k].to_record() for k in sorted(predictions)), path)


def read_video_predictions(path: Union[str, Path]) -> Dict[str, VideoPrediction]:
    predictions = {}
    for _, record in iter_jsonl(path):
        prediction = VideoPrediction.from_record(record)
        predictions[prediction.video_id] = prediction
    return predictions


def ground_truth_labels(annotations: Iterable[Any]) -> Dict[str, int]:
    """`video_id -> global_label` from parsed manifest annotations."""
    return {a.video_id: a.global_label for a in annotations}


def estimate_report(
    per_model_accuracy: Sequence[float],
    n_videos: int,
    seed: int,
    tie_policy: str = "positive",
    model_ids: Optional[Sequence[str]] = None,
) -> Dict[str, Any]:
    """
    Simulated ensemble accuracy next to its exact expectation, with the
    independence assumption stated.
    """
    accuracies = _check_accuracies(per_model_accuracy)
    if model_ids is not None and len(model_ids) != len(accuracies):
        raise DomainError("Argument 'model_ids' must match the accuracies in length.")
    if model_ids:
        names = list(model_ids)
    else:
        names = [f"model_{i + 1}" for i in range(len(accuracies))]
    simulated = simulate_ensemble(accuracies, n_videos, seed, tie_policy)
    try:
        expected: Optional[float] = expected_vote_accuracy(accuracies, tie_policy)
    except TieError:
        expected = None
    return {
        "models": [{"model_id": n, "accuracy": p} for n, p in zip(names, accuracies)],
        "n_videos": n_videos,
        "seed": seed,
        "tie_policy": tie_policy,
        "simulated_vote_accuracy": simulated,
        "expected_vote_accuracy": expected,
        "notes": [
            "Models are assumed to err independently; correlated models gain less "
            "from voting."
        ],
    }
