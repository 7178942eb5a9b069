# -*- coding: utf-8 -*-

"""
Command-line entry point. Each subcommand is one pipeline stage; they share a
single run configuration (`--config`) that flags can override.

Exit codes: 0 success, 1 fatal error, 2 finished with failures in strict mode.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .annotations import Diagnostic, VideoAnnotation, load_manifest, validate
from .config import RunConfig, load_config
from .dataset import build_sample, emit_train_config, write_jsonl, write_train_config
from .errors import AhDetectError
from .evaluation import (
    ENSEMBLE_ID,
    ModelAggregate,
    aggregate_model,
    build_report,
    ensemble,
    estimate_report,
    format_table,
    ground_truth_labels,
    read_video_predictions,
    write_video_predictions,
)
from .inference import (
    model_filename,
    model_ids_in,
    read_predictions,
    run_batch,
    write_model_index,
    write_predictions,
)
from .logs import configure_logging, log_stage
from .media import (
    ClipRecord,
    MediaInfo,
    MediaToolchain,
    materialize_clips,
    read_clip_records,
    write_clip_records,
)
from .segmenter import (
    ClipSpec,
    plan_inference_clips,
    plan_training_clips,
    write_plan,
)
from .utils import dump_json_line, write_json, write_jsonl as write_records

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2

Sources = Dict[str, Tuple[Path, MediaInfo]]


def _media_path(annotation: VideoAnnotation, manifest_path: Path) -> Path:
    path = Path(annotation.media_path)
    return path if path.is_absolute() else manifest_path.parent / path


def _probe_sources(
    toolchain: MediaToolchain, annotations: Sequence[VideoAnnotation], manifest: Path
) -> Sources:
    sources = {}
    for annotation in annotations:
        path = _media_path(annotation, manifest)
        try:
            sources[annotation.video_id] = (path, toolchain.probe(path))
        except (AhDetectError, FileNotFoundError):
            logger.error("cannot read media", extra={"video_id": annotation.video_id})
            raise
    return sources


def cmd_preprocess(config: RunConfig) -> int:
    """Validated annotations, training clip plan and cut clips."""
    manifest = config.require_manifest()
    with log_stage("load-manifest"):
        annotations = load_manifest(manifest)

    toolchain = config.media.toolchain()
    if annotations:
        toolchain.check()
    with log_stage("probe"):
        sources = _probe_sources(toolchain, annotations, manifest)

    diagnostics: List[Diagnostic] = []
    clips: List[ClipSpec] = []
    with log_stage("plan"):
        for annotation in annotations:
            try:
                validated = validate(
                    annotation, sources[annotation.video_id][1].duration_s, diagnostics
                )
                clips.extend(plan_training_clips(validated, config.policy))
            except AhDetectError:
                logger.error(
                    "invalid annotation", extra={"video_id": annotation.video_id}
                )
                raise
        write_plan(clips, config.plan_path)
        write_records((d.to_record() for d in diagnostics), config.diagnostics_path)

    with log_stage("cut"):
        records = materialize_clips(
            toolchain,
            clips,
            sources,
            config.media_out_dir,  # type: ignore[arg-type]
            extract_audio=config.media.extract_audio,
            max_workers=config.media.process_cap,
        )
        write_clip_records(records, config.clips_path)

    logger.info(
        "preprocess done",
        extra={
            "videos": len(annotations),
            "clips": len(records),
            "diagnostics": len(diagnostics),
        },
    )
    return EXIT_OK


def cmd_build_dataset(config: RunConfig) -> int:
    """Instruction dataset from the cut clips, plus one train config per strategy."""
    records = read_clip_records(config.clips_path)
    prompt = config.prompt
    with log_stage("build-dataset"):
        samples = [build_sample(r, prompt) for r in records]
        count = write_jsonl(
            samples,
            config.dataset_out_path,  # type: ignore[arg-type]
            system_message=config.system_message,
        )
    for strategy in config.strategies:
        epochs = config.full_epochs if strategy == "full" else None
        write_train_config(
            emit_train_config(strategy, epochs),
            config.train_config_dir / f"{strategy}.cfg",
        )
    logger.info(
        "dataset written",
        extra={"samples": count, "path": str(config.dataset_out_path)},
    )
    return EXIT_OK


def cmd_emit_train_config(
    strategy: str, epochs: Optional[int], out: Optional[str]
) -> int:
    train_config = emit_train_config(strategy, epochs)
    if out:
        write_train_config(train_config, out)
    else:
        print("\n".join(train_config.to_lines()))
    return EXIT_OK


def _prepare_test_clips(
    config: RunConfig, clips_path: Optional[str]
) -> List[ClipRecord]:
    if clips_path:
        return read_clip_records(clips_path)

    manifest = config.require_manifest(test=True)
    annotations = load_manifest(manifest)
    toolchain = config.media.toolchain()
    if annotations:
        toolchain.check()
    sources = _probe_sources(toolchain, annotations, manifest)
    plan: List[ClipSpec] = []
    for annotation in annotations:
        info = sources[annotation.video_id][1]
        plan.extend(
            plan_inference_clips(annotation.video_id, info.duration_s, config.policy)
        )
    write_plan(plan, config.test_plan_path)
    with log_stage("cut-test"):
        records = materialize_clips(
            toolchain,
            plan,
            sources,
            config.test_media_dir,
            extract_audio=config.media.extract_audio,
            max_workers=config.media.process_cap,
        )
    write_clip_records(records, config.test_clips_path)
    return records


def cmd_infer(config: RunConfig, clips_path: Optional[str], evaluate: bool) -> int:
    """Clip predictions from every endpoint, optionally scored right away."""
    endpoints = config.require_endpoints()
    records = _prepare_test_clips(config, clips_path)
    if clips_path:
        write_clip_records(records, config.test_clips_path)

    with log_stage("infer"):
        result = run_batch(
            records, endpoints, config.prompt, max_in_flight=config.max_in_flight
        )
        write_predictions(result, config.predictions_dir)
    logger.info(
        "inference done",
        extra={
            "predictions": result.prediction_count,
            "failures": len(result.failures),
        },
    )

    if evaluate:
        return cmd_evaluate(config)
    if result.failures and config.abstain_policy == "strict":
        return EXIT_PARTIAL
    return EXIT_OK


def _model_ids(config: RunConfig) -> List[str]:
    if config.endpoints:
        return [e.model_id for e in config.endpoints]
    return sorted(model_ids_in(config.predictions_dir, exclude=["failures"]).values())


def _aggregate_all(config: RunConfig) -> List[ModelAggregate]:
    clips = read_clip_records(config.test_clips_path)
    model_ids = _model_ids(config)
    if not model_ids:
        raise FileNotFoundError(f"No predictions found in {config.predictions_dir}")
    predictions = read_predictions(config.predictions_dir, model_ids)
    return [
        aggregate_model(
            model_id, clips, predictions.predictions[model_id], config.abstain_policy
        )
        for model_id in model_ids
    ]


def cmd_aggregate(config: RunConfig) -> int:
    """Per-model video predictions by the max rule."""
    aggregates = _aggregate_all(config)
    write_model_index((a.model_id for a in aggregates), config.videos_dir)
    for aggregate in aggregates:
        write_video_predictions(
            aggregate.videos,
            config.videos_dir / f"{model_filename(aggregate.model_id)}.jsonl",
        )
        logger.info(
            "videos aggregated",
            extra={"model_id": aggregate.model_id, "videos": len(aggregate.videos)},
        )
    return EXIT_OK


def cmd_vote(config: RunConfig) -> int:
    """Ensemble video predictions from the per-model ones."""
    per_model = {
        model_id: read_video_predictions(config.videos_dir / f"{stem}.jsonl")
        for stem, model_id in model_ids_in(
            config.videos_dir, exclude=[ENSEMBLE_ID]
        ).items()
    }
    if not per_model:
        raise FileNotFoundError(f"No video predictions found in {config.videos_dir}")

    dropped: List[str] = []
    if config.abstain_policy == "strict":
        # each model may have left different videos unresolved
        shared = set.intersection(*(set(v) for v in per_model.values()))
        dropped = sorted(set().union(*per_model.values()) - shared)
        per_model = {
            m: {k: v for k, v in videos.items() if k in shared}
            for m, videos in per_model.items()
        }
    fused = ensemble(per_model, config.tie_policy)
    write_video_predictions(fused, config.videos_dir / f"{ENSEMBLE_ID}.jsonl")
    logger.info(
        "ensemble written", extra={"models": len(per_model), "videos": len(fused)}
    )
    if dropped:
        logger.warning("videos left out of the vote", extra={"video_ids": dropped})
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_evaluate(config: RunConfig) -> int:
    """Metrics report over every model and the ensemble."""
    truth = ground_truth_labels(load_manifest(config.require_manifest(test=True)))
    with log_stage("evaluate"):
        aggregates = _aggregate_all(config)
        report = build_report(
            aggregates, truth, config.tie_policy, config.abstain_policy
        )
    write_json(report, config.report_path)
    print(format_table(report))

    strict = config.abstain_policy == "strict"
    if strict and (report["unresolved_videos"] or report["failed_clips"]):
        logger.warning(
            "evaluation incomplete",
            extra={"unresolved_videos": len(report["unresolved_videos"])},
        )
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_simulate_ensemble(
    accuracies: Sequence[float],
    n_videos: int,
    seed: int,
    tie_policy: str,
    out: Optional[str],
) -> int:
    with log_stage("simulate-ensemble"):
        report = estimate_report(accuracies, n_videos, seed, tie_policy)
    if out:
        write_json(report, out)
    print(dump_json_line(report))
    return EXIT_OK


def cmd_gen_fixtures(
    out_dir: str,
    count: int,
    seed: int,
    toolchain: MediaToolchain,
    silent: bool = False,
) -> int:
    """
    Writes a synthetic corpus: `videos/*.mp4` and a `manifest.jsonl` whose
    positive videos carry one annotated segment each.
    """
    toolchain.check()
    rng = np.random.default_rng(seed)
    root = Path(out_dir)
    records = []
    with log_stage("gen-fixtures"):
        for index in range(count):
            video_id = f"fixture_{index:03d}"
            # tenths of a second keep every boundary exact in milliseconds
            duration_ds = int(rng.integers(30, 141))
            label = int(index % 2 == 0)
            relative = Path("videos") / f"{video_id}.mp4"
            toolchain.gen_fixture(
                duration_ds / 10, True, root / relative, tone=not silent
            )
            record = {"video_id": video_id, "path": relative.as_posix(), "label": label}
            if label:
                start = int(rng.integers(0, duration_ds - 10))
                end = int(rng.integers(start + 10, duration_ds + 1))
                record["segments"] = [[start / 10, end / 10]]
            records.append(record)
    write_records(records, root / "manifest.jsonl")
    logger.info("fixtures written", extra={"videos": count, "path": str(root)})
    return EXIT_OK


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--manifest", help="training annotation manifest")
    parser.add_argument("--test-manifest", help="test annotation manifest")
    parser.add_argument("--work-dir", help="directory for intermediate outputs")
    parser.add_argument("--prompt-variant", help="prompt registry id")
    parser.add_argument("--max-in-flight", type=int, help="per-endpoint request cap")
    parser.add_argument(
        "--tie-policy", choices=("positive", "negative", "error"), help="vote ties"
    )
    parser.add_argument(
        "--abstain-policy",
        choices=("negative", "strict"),
        help="treatment of unanswered clips",
    )
    parser.add_argument(
        "--strict",
        action="store_true",
        help="same as --abstain-policy strict; failures exit with code 2",
    )
    parser.add_argument("--seed", type=int, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ah-detect",
        description="Ambivalence/hesitancy recognition pipeline for videos.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logs")

    overrides = argparse.ArgumentParser(add_help=False)
    _add_overrides(overrides)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser(
        "preprocess", parents=[overrides], help="validate, plan and cut training clips"
    )
    sub.add_parser(
        "build-dataset", parents=[overrides], help="write the instruction dataset"
    )

    emit = sub.add_parser("emit-train-config", help="print fine-tuning settings")
    emit.add_argument("--strategy", choices=("lora", "full"), required=True)
    emit.add_argument("--epochs", type=int, help="full fine-tuning epochs (2 or 3)")
    emit.add_argument("--out", help="write to this file instead of stdout")

    infer = sub.add_parser(
        "infer", parents=[overrides], help="run clip inference on the test set"
    )
    infer.add_argument("--clips", help="existing test clip records to reuse")
    infer.add_argument(
        "--evaluate", action="store_true", help="aggregate, vote and score afterwards"
    )

    sub.add_parser("aggregate", parents=[overrides], help="clip to video predictions")
    sub.add_parser("vote", parents=[overrides], help="majority vote across models")
    sub.add_parser("evaluate", parents=[overrides], help="metrics report")

    simulate = sub.add_parser(
        "simulate-ensemble",
        parents=[overrides],
        help="vote accuracy of independent simulated models",
    )
    simulate.add_argument(
        "--accuracy",
        type=float,
        nargs="+",
        default=[0.819, 0.798, 0.653],
        help="per-model accuracies",
    )
    simulate.add_argument("--n-videos", type=int, default=100_000)
    simulate.add_argument("--out", help="also write the JSON report here")

    fixtures = sub.add_parser(
        "gen-fixtures", parents=[overrides], help="write a synthetic video corpus"
    )
    fixtures.add_argument("--out-dir", required=True)
    fixtures.add_argument("--count", type=int, default=20)
    fixtures.add_argument(
        "--silent", action="store_true", help="silent audio track instead of a tone"
    )
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    abstain_policy = "strict" if args.strict else args.abstain_policy
    return config.with_overrides(
        manifest_path=Path(args.manifest) if args.manifest else None,
        test_manifest_path=Path(args.test_manifest) if args.test_manifest else None,
        work_dir=Path(args.work_dir) if args.work_dir else None,
        prompt_variant_id=args.prompt_variant,
        max_in_flight=args.max_in_flight,
        tie_policy=args.tie_policy,
        abstain_policy=abstain_policy,
        seed=args.seed,
    )


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "emit-train-config":
        return cmd_emit_train_config(args.strategy, args.epochs, args.out)

    config = _run_config(args)
    if args.command == "simulate-ensemble":
        return cmd_simulate_ensemble(
            args.accuracy, args.n_videos, config.seed, config.tie_policy, args.out
        )
    if args.command == "gen-fixtures":
        return cmd_gen_fixtures(
            args.out_dir, args.count, config.seed, config.media.toolchain(), args.silent
        )
    if args.command == "preprocess":
        return cmd_preprocess(config)
    if args.command == "build-dataset":
        return cmd_build_dataset(config)
    if args.command == "infer":
        return cmd_infer(config, args.clips, args.evaluate)
    if args.command == "aggregate":
        return cmd_aggregate(config)
    if args.command == "vote":
        return cmd_vote(config)
    return cmd_evaluate(config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(-1 if args.quiet else 1 if args.verbose else 0)
    try:
        return dispatch(args)
    except (AhDetectError, OSError) as exc:
        logger.error(str(exc), extra={"error": type(exc).__name__})
        print(f"ah-detect: error: {exc}", file=sys.stderr)
        return EXIT_FATAL
