#!/usr/bin/env python3
"""
Video Pointing Toolkit
======================

Command-line entry point. Wires the modules into reproducible runs: synthetic
data generation, point annotation, bidirectional mask fusion, evaluation,
ablation sweeps and the temporal-module verification. Every command writes a
run.json manifest next to its outputs; `replay` re-executes one.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from pydantic import ValidationError

# Import configuration first
from core.config import (
    DEFAULT_CANDIDATES, DEFAULT_CONTEXT_LENGTH, DEFAULT_K, DEFAULT_LOG_LEVEL, DEFAULT_SEED, DEFAULT_STRATEGY,
    DEFAULT_TAU, DEFAULT_WORKERS, EXIT_FAILURE, EXIT_INPUT_ERROR, EXIT_OK, EXIT_VERIFICATION_FAILED, LOG_FILE,
    OUTPUT_ROOT, STRATEGIES, TOOL_NAME, TOOL_VERSION,
)
from core.errors import InvalidInputError, MalformedDataError, ToolkitError, VerificationError

logger = logging.getLogger("videopoint")

from modules.annotator import PointAnnotation, annotate_clip, group_points
from modules.benchmark import BenchmarkConfig, GridPoint, grid_points, make_propagator, sweep
from modules.formatters import (
    render_annotation_summary, render_attn_check, render_help, render_objects_table, render_report_table,
    render_sweep_table,
)
from modules.fusion import FusionConfig, KeyframeSet, fuse_clip, points_to_keyframes
from modules.metrics import EvalReport, PointScore, aggregate, counting, object_scores, point_counts
from modules.storage import (
    RUN_MANIFEST, RunManifest, StoredClip, read_annotations, read_clips, read_counts, read_keyframes,
    read_run_manifest, read_yaml, save_params, load_params, write_annotations, write_clip, write_json,
    write_run_manifest, write_suite,
)
from modules.synth import generate, noisy_propagator, parse_synth_config, segment_oracle
from modules.temporal import TemporalHead, TemporalVariant, attn_check

REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.json"
ANNOTATIONS_FILE = "annotations.jsonl"


def setup_logging(level: str = DEFAULT_LOG_LEVEL, log_file: str = LOG_FILE) -> None:
    # stdout carries the tables, logs go to stderr
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


# ----------------------------------------------------------------------------
# Helpers
# ----------------------------------------------------------------------------

def out_dir(args: argparse.Namespace) -> Path:
    return Path(args.out) if args.out else Path(OUTPUT_ROOT) / args.command


def listed_outputs(directory: Path) -> List[str]:
    return sorted(str(p.relative_to(directory)) for p in directory.rglob("*")
                  if p.is_file() and p.name != RUN_MANIFEST)


def finish_run(args: argparse.Namespace, directory: Path) -> None:
    resolved = {key: value for key, value in vars(args).items() if key not in ("func", "command", "log_level")}
    manifest = RunManifest(command=args.command, args=resolved, outputs=listed_outputs(directory))
    path = write_run_manifest(directory, manifest)
    logger.info("Манифест запуска: %s", path)


def clip_points(points: Sequence[PointAnnotation], name: str, single: bool) -> List[PointAnnotation]:
    """Lines addressed to clip ``name``; unnamed lines only apply when there is a single clip."""
    return [p for p in points if p.video == name or (single and not p.video)]


def stored_count(clip: StoredClip) -> int:
    return clip.manifest.count if clip.manifest.count is not None else len(clip.manifest.objects)


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    cfg = parse_synth_config(read_yaml(args.config))
    clips = generate(cfg, args.seed)
    out = out_dir(args)
    if len(clips) == 1 and cfg.kind == "scene":
        clip = clips[0]
        write_clip(out, clip.gt, clip.name, labels=clip.labels, points=clip.points, count=clip.count, seed=args.seed)
    else:
        for clip in clips:
            write_clip(out / clip.name, clip.gt, clip.name, labels=clip.labels, points=clip.points,
                       count=clip.count, seed=args.seed)
        write_suite(out, [(c.name, c.count) for c in clips], args.seed)
    finish_run(args, out)
    print(f"✅ {len(clips)} клип(ов) записано в {out}")
    return EXIT_OK


def cmd_annotate(args: argparse.Namespace) -> int:
    clips = read_clips(args.clips)
    annotations: List[PointAnnotation] = []
    tasks = failed = 0
    for clip in clips:
        if clip.labels is None:
            raise InvalidInputError(f"{clip.path}: annotation needs label frames for the segment oracle")
        batch = annotate_clip(clip.masks, args.candidates, segment_oracle(clip.labels), args.seed, video=clip.name)
        annotations.extend(batch.annotations)
        tasks += len(batch.annotations) + len(batch.failures)
        failed += len(batch.failures)
        print(render_annotation_summary(clip.name, len(batch.annotations), len(batch.failures)))
    out = out_dir(args)
    write_annotations(out / ANNOTATIONS_FILE, annotations)
    finish_run(args, out)
    if tasks and failed == tasks:
        logger.error("Все %d задач аннотации завершились ошибкой", tasks)
        return EXIT_FAILURE
    return EXIT_OK


def _fuse_keyframes(args: argparse.Namespace, clip: StoredClip, points: Optional[List[PointAnnotation]],
                    single: bool) -> KeyframeSet:
    gt = clip.masks
    if args.keyframes:
        kf = read_keyframes(args.keyframes, gt.object_ids, gt.frame_count)
        if kf.shape != (gt.height, gt.width):
            raise InvalidInputError(f"keyframe masks are {kf.shape}, clip frames are {(gt.height, gt.width)}")
        return kf
    if points is not None:
        if clip.labels is None:
            raise InvalidInputError(f"{clip.path}: point keyframes need label frames for the segment oracle")
        return points_to_keyframes(clip_points(points, clip.name, single), segment_oracle(clip.labels),
                                   gt.frame_count, args.k, gt.width, gt.height, object_ids=gt.object_ids)
    return KeyframeSet.from_clip(gt, args.k)


def cmd_fuse(args: argparse.Namespace) -> int:
    if args.keyframes and args.points:
        raise InvalidInputError("give either --keyframes or --points, not both")
    if args.direction and args.propagator != "noisy":
        raise InvalidInputError("--direction restricts noisy dropout; use it with --propagator noisy")
    cfg = FusionConfig(k=args.k, tau=args.tau, strategy=args.strategy)
    clips = read_clips(args.clips)
    single = len(clips) == 1
    if args.keyframes and not single:
        raise InvalidInputError("--keyframes applies to a single clip directory")
    points = read_annotations(args.points) if args.points else None
    out = out_dir(args)
    for clip in clips:
        kf = _fuse_keyframes(args, clip, points, single)
        if args.direction:
            prop = noisy_propagator(clip.masks, args.jitter, args.dropout, args.seed,
                                    direction=args.direction, stream=clip.name, spill=args.spill)
        else:
            prop = make_propagator(args.propagator, clip.masks, clip.name, args.jitter, args.dropout,
                                   args.seed, args.spill)
        pred = fuse_clip(kf, prop, cfg)
        target = out if single else out / clip.name
        write_clip(target, pred, clip.name, count=clip.manifest.count, seed=args.seed, predicted=True)
    if not single:
        write_suite(out, [(c.name, stored_count(c)) for c in clips], args.seed)
    finish_run(args, out)
    print(f"✅ Слияние {cfg.strategy.value} (k={cfg.k}, tau={cfg.tau}): {len(clips)} клип(ов) в {out}")
    return EXIT_OK


FUSE_ECHO = ("propagator", "jitter", "dropout", "spill", "direction", "seed", "keyframes", "points")


def fusion_echo(report: EvalReport, pred_path: str) -> None:
    """Fill strategy, tau and k from the run.json that `fuse` left next to the predictions."""
    manifest_path = Path(pred_path) / RUN_MANIFEST
    if not manifest_path.is_file():
        return
    try:
        manifest = read_run_manifest(manifest_path)
    except MalformedDataError as e:
        logger.warning("Манифест %s не прочитан: %s", manifest_path, e)
        return
    if manifest.command != "fuse":
        return
    args = manifest.args
    report.strategy, report.tau, report.k = args.get("strategy"), args.get("tau"), args.get("k")
    report.config["fuse"] = {key: args.get(key) for key in FUSE_ECHO}


def evaluate(pred_path: str, gt_path: str, points_path: Optional[str] = None,
             counts_path: Optional[str] = None) -> EvalReport:
    gts = read_clips(gt_path)
    preds = {c.name: c for c in read_clips(pred_path)}
    names = [c.name for c in gts]
    if set(preds) != set(names):
        raise InvalidInputError(f"clip rosters differ: pred {sorted(preds)}, gt {sorted(names)}")
    objects = []
    for gt in gts:
        objects.extend(object_scores(preds[gt.name].masks, gt.masks, clip_name=gt.name))
    report = EvalReport(dataset=Path(gt_path).name,
                        config={"pred": str(pred_path), "gt": str(gt_path),
                                "points": points_path, "counts": counts_path},
                        objects=objects)
    report.with_segmentation(aggregate(objects))
    fusion_echo(report, pred_path)

    if points_path:
        if not Path(points_path).is_file():
            logger.warning("Файл точек %s не найден, метрики точек пропущены", points_path)
        else:
            points = read_annotations(points_path)
            totals = [0, 0, 0]
            for gt in gts:
                grouped = group_points(clip_points(points, gt.name, len(gts) == 1), gt.masks.width, gt.masks.height)
                totals = [a + b for a, b in zip(totals, point_counts(grouped, gt.masks))]
            report.with_points(PointScore.from_counts(*totals))

    if counts_path:
        if not Path(counts_path).is_file():
            logger.warning("Файл подсчета %s не найден, метрики подсчета пропущены", counts_path)
        else:
            predicted = read_counts(counts_path)
            missing = [n for n in names if n not in predicted]
            if missing:
                raise InvalidInputError(f"no predicted count for clips {missing}")
            report.with_counts(counting([predicted[n] for n in names], [stored_count(c) for c in gts]))
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate(args.pred, args.gt, args.points, args.counts)
    out = out_dir(args)
    write_json(out / REPORT_FILE, report.to_dict())
    finish_run(args, out)
    print(render_report_table(report))
    if args.objects:
        print(render_objects_table(report))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = BenchmarkConfig.model_validate(read_yaml(args.config) or {})
    if cfg.clips is not None:
        named = [(c.name, c.masks) for c in read_clips(cfg.clips)]
    else:
        named = [(c.name, c.gt) for c in generate(cfg.suite, cfg.seed)]
    points: List[GridPoint] = grid_points(cfg.grid, cfg.noise)
    logger.info("Сетка %s: %d точек, %d клипов", cfg.name, len(points), len(named))
    result = sweep(named, points, cfg.propagator, cfg.seed, dataset=cfg.name,
                   workers=args.workers, spill=cfg.noise.spill)
    out = out_dir(args)
    for i, report in enumerate(result.reports):
        write_json(out / f"report_{i:03d}.json", report.to_dict())
    write_json(out / SUMMARY_FILE, result.summary())
    finish_run(args, out)
    print(render_sweep_table(result.summary()))
    return EXIT_OK


def cmd_attn_check(args: argparse.Namespace) -> int:
    head = None
    classes = args.classes
    if args.load_params:
        head = TemporalHead.from_tensors(args.heads, load_params(args.load_params))
        classes = head.classes
    report = attn_check(args.heads, args.dim, args.windows, step=args.step, seed=args.seed,
                        context_length=args.context_length, classes=classes,
                        variant=TemporalVariant(args.variant), head=head)
    out = out_dir(args)
    write_json(out / REPORT_FILE, report.to_dict())
    if args.save_params:
        save_params(args.save_params, report.params)
    finish_run(args, out)
    print(render_attn_check(report))
    if not report.passed:
        raise VerificationError(f"max relative error {report.grad.max_error:.3e} "
                                f"(worst: {report.grad.worst})")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    manifest = read_run_manifest(args.manifest)
    if manifest.command not in COMMANDS or manifest.command == "replay":
        raise MalformedDataError(f"cannot replay command {manifest.command!r}")
    if manifest.version != TOOL_VERSION:
        logger.warning("Манифест создан версией %s, текущая версия %s", manifest.version, TOOL_VERSION)
    replayed = build_parser().parse_args([manifest.command])
    for key, value in manifest.args.items():
        setattr(replayed, key, value)
    if args.out:
        replayed.out = args.out
    logger.info("Повтор команды %s", manifest.command)
    return replayed.func(replayed)


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "annotate": cmd_annotate,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "attn-check": cmd_attn_check,
    "replay": cmd_replay,
}


# ----------------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Language-conditioned video pointing toolkit",
        epilog=render_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    parser.add_argument("--log-level", default=DEFAULT_LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=COMMANDS[name])
        if name != "replay":
            p.add_argument("--out", help=f"output directory (default: {OUTPUT_ROOT}/{name})")
        return p

    # Optional positionals use nargs="?" so `replay` can build a bare namespace and fill it in.
    p = command("synth", "generate a synthetic clip or suite")
    p.add_argument("config", nargs="?", help="scene/suite YAML config")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = command("annotate", "point annotations from ground-truth masks")
    p.add_argument("clips", nargs="?", help="clip or suite directory")
    p.add_argument("--candidates", type=int, default=DEFAULT_CANDIDATES)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = command("fuse", "bidirectional mask fusion over keyframes")
    p.add_argument("clips", nargs="?", help="clip or suite directory")
    p.add_argument("--keyframes", help="directory of indexed PGM keyframe masks")
    p.add_argument("--points", help="annotation lines turned into keyframe masks")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--strategy", choices=STRATEGIES, default=DEFAULT_STRATEGY)
    p.add_argument("--propagator", choices=("exact", "noisy"), default="exact")
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--spill", type=float, default=0.0)
    p.add_argument("--direction", choices=("forward", "backward"),
                   help="restrict noisy dropout to one propagation direction")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = command("eval", "J / F / J&F, pointing and counting metrics")
    p.add_argument("pred", nargs="?", help="predicted clip or suite directory")
    p.add_argument("gt", nargs="?", help="ground-truth clip or suite directory")
    p.add_argument("--points", help="predicted points (annotation lines)")
    p.add_argument("--counts", help="predicted counts JSON")
    p.add_argument("--objects", action="store_true", help="print the per-object table")

    p = command("sweep", "ablation grid over strategy, k, tau, l and noise")
    p.add_argument("config", nargs="?", help="benchmark YAML config")
    p.add_argument("--workers", type=int, default=DEFAULT_WORKERS)

    p = command("attn-check", "gradient and invariant checks of the temporal module")
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--windows", type=int, default=4)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--context-length", type=int, default=DEFAULT_CONTEXT_LENGTH)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--variant", choices=[v.value for v in TemporalVariant], default=TemporalVariant.CROSS.value)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--save-params", help="write the parameter snapshot here")
    p.add_argument("--load-params", help="check a saved parameter snapshot")

    p = command("replay", "re-run a command from its run.json")
    p.add_argument("manifest", help="run.json or the directory holding it")
    p.add_argument("--out", help="write outputs here instead of the recorded directory")
    return parser


REQUIRED = {"synth": ("config",), "annotate": ("clips",), "fuse": ("clips",),
            "eval": ("pred", "gt"), "sweep": ("config",)}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    if not args.command:
        parser.print_help()
        return EXIT_INPUT_ERROR
    missing = [name for name in REQUIRED.get(args.command, ()) if getattr(args, name) is None]
    if missing:
        parser.error(f"{args.command}: missing {', '.join(missing)}")
    try:
        return args.func(args)
    except VerificationError as e:
        logger.error("Проверка не пройдена: %s", e)
        return EXIT_VERIFICATION_FAILED
    except (InvalidInputError, MalformedDataError) as e:
        logger.error("Некорректный ввод: %s", e)
        return EXIT_INPUT_ERROR
    except ValidationError as e:
        logger.error("Некорректная конфигурация: %s", e)
        return EXIT_INPUT_ERROR
    except FileNotFoundError as e:
        logger.error("Файл не найден: %s", e)
        return EXIT_INPUT_ERROR
    except ToolkitError as e:
        logger.error("Ошибка: %s", e)
        return EXIT_FAILURE
    except OSError as e:
        logger.error("Ошибка ввода-вывода: %s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
