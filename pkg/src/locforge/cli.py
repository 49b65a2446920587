"""``forge`` command-line interface.

Subcommands: ingest, curate, consolidate, render, eval, plan, shapes,
stats, pipeline. Exit codes: 0 success, 1 configuration error, 2 data
error, 3 verification failure. Stage events are emitted as JSON lines
on stdout; human-readable summaries go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from . import report as report_mod
from .consolidate import Split, consolidate, load_mixspecs, verify_manifest
from .convo import TemplatePack, estimate_length, parse_localization, serialize_sample
from .curate import (
    CurationLedger,
    Lexicon,
    curate_reg,
    merge_to_detection,
    reorganize_grounding,
    to_rec_samples,
)
from .errors import ConfigError, DataError, ForgeError, NoBoxesFoundError, VerificationError
from .evalkit import (
    EvalParams,
    EvalReport,
    GroundTruth,
    Prediction,
    coco_map,
    counting_mae,
    rec_accuracy,
)
from .ingest import (
    SourceDescriptor,
    SourceFormat,
    ingest_captions,
    ingest_coco_detection,
    ingest_referring,
    ingest_region_descriptions,
    ingest_text_only,
)
from .jsonl import (
    load_annotated_images,
    read_json,
    read_jsonl,
    write_json,
    write_jsonl,
)
from .model import (
    Box,
    DEFAULT_COORD_BINS,
    from_grid,
    conversation_to_row,
    image_to_row,
    region_rows,
    sample_from_row,
    sample_to_row,
    validate_box,
)
from .pipeline import PipelineConfig, run_pipeline
from .planner import MODEL_SCALES, ShapeSpec, default_plans, validate_plan
from .stats import corpus_stats


def log_event(stage: str, event: str, fields: dict) -> None:
    print(json.dumps({"stage": stage, "event": event, **fields}, sort_keys=True))
    if event in ("stage_complete", "done"):
        print(f"[{stage}] {event}", file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    src = SourceDescriptor(args.source, SourceFormat(args.format), Path(args.infile))
    out = Path(args.out)
    if src.format is SourceFormat.COCO_DETECTION_JSON:
        images, ledger = ingest_coco_detection(src, args.lenient)
    elif src.format is SourceFormat.REFERRING_JSON:
        images, ledger = ingest_referring(src, args.lenient)
    elif src.format is SourceFormat.REGION_DESCRIPTION_JSON:
        images, ledger = ingest_region_descriptions(
            src, args.lenient, pretag_detailed=args.pretag_detailed or None
        )
    elif src.format is SourceFormat.CAPTION_JSONL:
        images, samples, ledger = ingest_captions(src, args.lenient)
        write_jsonl(out / "images.jsonl", (image_to_row(im) for im in images))
        write_jsonl(out / "samples.jsonl", (sample_to_row(s) for s in samples))
        write_json(out / "ledger.json", ledger.as_dict())
        log_event("ingest", "done", ledger.as_dict())
        return 0
    else:
        samples, ledger = ingest_text_only(src, args.lenient)
        write_jsonl(out / "samples.jsonl", (sample_to_row(s) for s in samples))
        write_json(out / "ledger.json", ledger.as_dict())
        log_event("ingest", "done", ledger.as_dict())
        return 0
    write_jsonl(out / "images.jsonl", (image_to_row(im) for im in images))
    write_jsonl(out / "regions.jsonl", (r for im in images for r in region_rows(im)))
    write_json(out / "ledger.json", ledger.as_dict())
    log_event("ingest", "done", ledger.as_dict())
    return 0


def cmd_curate(args: argparse.Namespace) -> int:
    lexicon = Lexicon.from_dir(Path(args.lexicons)) if args.lexicons else Lexicon.default()
    images = load_annotated_images(Path(args.indir))
    task_level = args.task_level or not args.annotation_level
    annotation_level = args.annotation_level or not args.task_level

    samples = []
    ledgers: dict[str, object] = {}
    if task_level:
        det_ledger = CurationLedger()
        label_pool: set[str] = set()
        for im in images:
            if not im.regions:
                continue
            s = merge_to_detection(im, lexicon, args.dedup_iou, det_ledger)
            label_pool.update(e["label"] for e in s.payload["entries"])
            samples.append(s)
        samples.extend(
            reorganize_grounding(images, sorted(label_pool), args.seed, lexicon, args.dedup_iou)
        )
        ledgers["detection"] = det_ledger.as_dict()
    if annotation_level:
        reg_samples, reg_ledger = curate_reg(images, lexicon)
        samples.extend(reg_samples)
        ledgers["reg"] = reg_ledger.as_dict()
    if args.rec:
        for im in images:
            samples.extend(to_rec_samples(im))

    out = Path(args.out)
    write_jsonl(out / "images.jsonl", (image_to_row(im) for im in images))
    write_jsonl(out / "samples.jsonl", (sample_to_row(s) for s in samples))
    write_json(out / "ledger.json", ledgers)
    log_event("curate", "done", {"samples": len(samples)})
    return 0


def cmd_consolidate(args: argparse.Namespace) -> int:
    specs = load_mixspecs(Path(args.mix))
    if args.split:
        split = Split(args.split)
        specs = [s for s in specs if s.split is split]
    if len(specs) != 1:
        raise ConfigError(
            f"{args.mix}: expected exactly one matching mix spec, got {len(specs)}; "
            "use --split to choose"
        )
    samples = []
    for indir in args.indirs:
        p = Path(indir) / "samples.jsonl"
        if not p.is_file():
            raise DataError(f"no samples.jsonl under {indir}")
        samples.extend(sample_from_row(r) for r in read_jsonl(p))
    selected, manifest = consolidate(specs[0], samples)
    out = Path(args.out)
    write_jsonl(out / "samples.jsonl", (sample_to_row(s) for s in selected))
    write_json(out / "manifest.json", manifest.as_dict())
    log_event("consolidate", "done", {"total": manifest.total, "deduped": manifest.deduped})
    if args.verify:
        verdict = verify_manifest(manifest.as_dict(), read_json(Path(args.verify)))
        write_json(out / "verify.json", verdict)
        if not verdict["passed"]:
            raise VerificationError("manifest verification failed")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    pack = TemplatePack.load(Path(args.templates)) if args.templates else TemplatePack.default()
    indir = Path(args.indir)
    images_dir = Path(args.images) if args.images else indir
    sizes = {}
    images_path = images_dir / "images.jsonl"
    if images_path.is_file():
        for row in read_jsonl(images_path):
            sizes[row["image_id"]] = (row["width"], row["height"])

    records = []
    over: list[str] = []
    for row in read_jsonl(indir / "samples.jsonl"):
        sample = sample_from_row(row)
        size = sizes.get(sample.image_ref) if sample.image_ref else None
        if sample.image_ref is not None and size is None:
            raise DataError(f"no image metadata for {sample.image_ref!r}")
        rec = serialize_sample(sample, pack, size, args.seed, args.bins)
        _, is_over = estimate_length(rec, args.budget)
        if is_over:
            over.append(rec.sample_id)
        records.append(rec)
    out = Path(args.out)
    write_jsonl(out / "conversations.jsonl", (conversation_to_row(r) for r in records))
    write_json(
        out / "render_report.json",
        {
            "rendered": len(records),
            "budget": args.budget,
            "over_budget": len(over),
            "over_budget_ids": over,
        },
    )
    log_event("render", "done", {"rendered": len(records), "over_budget": len(over)})
    return 0


def _grid_to_abs(box: Box, size: Optional[tuple[int, int]]) -> Optional[Box]:
    if size is None:
        return None
    try:
        return from_grid(box, size[0], size[1])
    except ForgeError:
        return None


def _load_detection_eval(args: argparse.Namespace):
    sizes: dict[str, tuple[int, int]] = {}
    if args.images:
        for row in read_jsonl(Path(args.images) / "images.jsonl"):
            sizes[row["image_id"]] = (row["width"], row["height"])
    gts = []
    for row in read_jsonl(Path(args.gt)):
        box = validate_box(Box(*row["bbox"]), float("inf"), float("inf"))
        gts.append(GroundTruth(row["image_id"], row["label"], box))
    preds = []
    rank = 0
    for row in read_jsonl(Path(args.preds)):
        if "raw_text" in row:
            size = sizes.get(row["image_id"])
            if size is None:
                raise ConfigError(
                    "raw-text predictions need --images for grid-to-pixel conversion"
                )
            try:
                parsed = parse_localization(row["raw_text"], args.bins)
            except NoBoxesFoundError:
                continue
            for label, boxes in parsed.entries:
                for b in boxes:
                    abs_box = _grid_to_abs(b, size)
                    if abs_box is None:
                        continue
                    preds.append(
                        Prediction(row["image_id"], label, abs_box, row.get("score", 1.0), rank)
                    )
                    rank += 1
        else:
            preds.append(
                Prediction(
                    row["image_id"],
                    row["label"],
                    Box(*row["bbox"]),
                    row.get("score", 1.0),
                    rank,
                )
            )
            rank += 1
    return preds, gts


def cmd_eval(args: argparse.Namespace) -> int:
    if args.task == "detection":
        preds, gts = _load_detection_eval(args)
        report = coco_map(preds, gts, EvalParams(max_dets=args.max_dets))
    elif args.task == "rec":
        gt_rows = {row["query_id"]: row for row in read_jsonl(Path(args.gt))}
        gts = {qid: Box(*row["bbox"]) for qid, row in gt_rows.items()}
        preds: dict[str, list[Box]] = {}
        for row in read_jsonl(Path(args.preds)):
            qid = row["query_id"]
            if "raw_text" in row:
                try:
                    parsed = parse_localization(row["raw_text"], args.bins)
                    boxes = parsed.boxes()
                except NoBoxesFoundError:
                    boxes = []
                gt_row = gt_rows.get(qid, {})
                if "width" in gt_row and "height" in gt_row:
                    size = (gt_row["width"], gt_row["height"])
                    boxes = [b for b in (_grid_to_abs(x, size) for x in boxes) if b]
                else:
                    boxes = [Box(b.x1, b.y1, b.x2, b.y2) for b in boxes]
                preds[qid] = boxes
            else:
                preds[qid] = [Box(*row["bbox"])] if row.get("bbox") else []
        accuracy = rec_accuracy(preds, gts, strict=not args.iou_geq)
        report = EvalReport(rec_accuracy={"all": accuracy})
    else:
        gt_counts = {}
        for row in read_jsonl(Path(args.gt)):
            gt_counts[row["query_id"]] = (
                row["count"] if "count" in row else len(row["bboxes"])
            )
        pred_counts = {}
        for row in read_jsonl(Path(args.preds)):
            qid = row["query_id"]
            if "raw_text" in row:
                try:
                    pred_counts[qid] = len(parse_localization(row["raw_text"], args.bins).boxes())
                except NoBoxesFoundError:
                    pred_counts[qid] = 0
            elif "count" in row:
                pred_counts[qid] = row["count"]
            else:
                pred_counts[qid] = len(row.get("bboxes", []))
        report = EvalReport(counting_mae=counting_mae(pred_counts, gt_counts))

    doc = {"task": args.task, **report.as_dict()}
    report_path = Path(args.report)
    write_json(report_path, doc)
    if args.task == "detection":
        report_mod.eval_csv(report, report_path.with_suffix(".csv"))
        if args.figures:
            report_mod.render_eval_figures(report, report_path.parent / "figures")
    log_event("eval", "done", {"task": args.task, "report": str(report_path)})
    return 0


def cmd_plan(args: argparse.Namespace) -> int:
    plans = default_plans(args.scale, halve_stage1_for_largest=args.halve_stage1)
    violations = [v for p in plans for v in validate_plan(p)]
    if violations:
        raise VerificationError(f"default plans invalid: {violations}")
    write_json(Path(args.out), [p.as_dict() for p in plans])
    log_event("plan", "done", {"scale": args.scale, "out": args.out})
    return 0


def cmd_shapes(args: argparse.Namespace) -> int:
    spec = ShapeSpec(
        encoder_res=args.res,
        patch=args.patch,
        pretrain_res=args.pretrain_res,
        kernel=args.k,
        stride=args.s,
        padding=args.p,
    )
    summary = spec.summary()
    if args.out:
        write_json(Path(args.out), summary)
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    samples_path = Path(args.indir) / "samples.jsonl"
    if samples_path.is_file():
        stats = corpus_stats(sample_from_row(r) for r in read_jsonl(samples_path))
    else:
        stats = corpus_stats([])
    out = Path(args.out)
    write_json(out / "stats.json", stats)
    report_mod.stats_csv(stats, out / "stats.csv")
    if args.figures:
        report_mod.render_stats_figures(stats, out / "figures")
    log_event("stats", "done", {"total": stats["total"]})
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(Path(args.config))
    summary = run_pipeline(
        cfg,
        Path(args.out),
        stages=args.stage or None,
        jobs=args.jobs,
        log=log_event,
    )
    print(json.dumps(summary, sort_keys=True))
    print(f"pipeline hash {summary['hash']}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert an external source to canonical JSONL")
    p.add_argument("--source", required=True, help="source name (namespaces ids)")
    p.add_argument("--format", required=True, choices=[f.value for f in SourceFormat])
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lenient", action="store_true")
    p.add_argument("--pretag-detailed", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("curate", help="task/annotation-level curation")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--dedup-iou", type=float, default=0.9)
    p.add_argument("--task-level", action="store_true")
    p.add_argument("--annotation-level", action="store_true")
    p.add_argument("--rec", action="store_true", help="also emit single-target samples")
    p.add_argument("--lexicons", help="directory overriding the built-in word lists")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("consolidate", help="quota-driven split assembly")
    p.add_argument("--mix", required=True)
    p.add_argument("--in", dest="indirs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=[s.value for s in Split])
    p.add_argument("--verify", help="reference count table to check the manifest against")
    p.set_defaults(func=cmd_consolidate)

    p = sub.add_parser("render", help="serialize samples into conversations")
    p.add_argument("--templates")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=4096)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--images", help="directory with images.jsonl (default: --in)")
    p.add_argument("--coord-bins", dest="bins", type=int, default=DEFAULT_COORD_BINS)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--task", required=True, choices=("detection", "rec", "counting"))
    p.add_argument("--preds", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--images", help="images.jsonl dir for raw-text predictions")
    p.add_argument("--coord-bins", dest="bins", type=int, default=DEFAULT_COORD_BINS)
    p.add_argument("--max-dets", type=int, default=100)
    p.add_argument("--iou-geq", action="store_true", help="count IoU == 0.5 as correct")
    p.add_argument("--figures", action="store_true", help="render figures next to report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plan", help="emit the three-stage training plans")
    p.add_argument("--scale", required=True, choices=MODEL_SCALES)
    p.add_argument("--out", required=True)
    p.add_argument("--halve-stage1", action="store_true")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("shapes", help="patch/connector token calculus")
    p.add_argument("--res", type=int, required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--s", type=int, default=2)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--pretrain-res", type=int, default=336)
    p.add_argument("--out")
    p.set_defaults(func=cmd_shapes)

    p = sub.add_parser("stats", help="corpus statistics report")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("pipeline", help="run ingest through report end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", action="append", choices=["ingest", "curate", "consolidate", "render", "report"])
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except ForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 2)


if __name__ == "__main__":
    sys.exit(main())
