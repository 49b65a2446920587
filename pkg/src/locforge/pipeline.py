"""End-to-end orchestration: ingest -> curate -> consolidate -> render -> report.

The orchestrator is single-threaded; per-image curation work is fanned
out to a bounded worker pool whose results come back in input order, so
the job count cannot change any output byte. Every stage writes through
atomic-rename, and the determinism hash covers all JSONL/JSON artifacts
of the stage directories (figures excluded).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from . import report as report_mod
from .consolidate import MixSpec, Split, consolidate, load_mixspecs, verify_manifest
from .convo import STAGE_BUDGETS, TemplatePack, estimate_length, serialize_sample
from .curate import (
    CurationLedger,
    Lexicon,
    curate_reg,
    merge_to_detection,
    reorganize_grounding,
    to_rec_samples,
)
from .errors import ConfigError, DataError, VerificationError
from .ingest import (
    INGESTERS,
    SourceDescriptor,
    SourceFormat,
    ingest_captions,
    ingest_text_only,
)
from .jsonl import (
    load_annotated_images,
    read_json,
    read_jsonl,
    tree_hash,
    write_json,
    write_jsonl,
)
from .model import (
    AnnotatedImage,
    DEFAULT_COORD_BINS,
    TaskSample,
    conversation_to_row,
    image_to_row,
    region_rows,
    sample_from_row,
    sample_to_row,
)
from .planner import MODEL_SCALES, default_plans
from .stats import corpus_stats

STAGES = ("ingest", "curate", "consolidate", "render", "report")

_IMAGE_FORMATS = (
    SourceFormat.COCO_DETECTION_JSON,
    SourceFormat.REFERRING_JSON,
    SourceFormat.REGION_DESCRIPTION_JSON,
)

DEFAULT_EMITS = {
    SourceFormat.COCO_DETECTION_JSON: ("detection", "grounding"),
    SourceFormat.REFERRING_JSON: ("rec", "reg"),
    SourceFormat.REGION_DESCRIPTION_JSON: ("reg", "detection", "grounding"),
    SourceFormat.CAPTION_JSONL: (),
    SourceFormat.PLAIN_TEXT_JSONL: (),
}

_EMIT_CHOICES = ("detection", "rec", "reg", "grounding")

LogFn = Callable[[str, str, dict], None]


def _silent_log(stage: str, event: str, fields: dict) -> None:
    pass


@dataclass(frozen=True)
class SourceConfig:
    name: str
    format: SourceFormat
    path: Path
    lenient: bool = False
    pretag_detailed: Optional[bool] = None
    emit: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, doc: dict, base: Path) -> "SourceConfig":
        try:
            fmt = SourceFormat(doc["format"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"source {doc.get('name')!r}: bad format") from exc
        emit = tuple(doc.get("emit", DEFAULT_EMITS[fmt]))
        for e in emit:
            if e not in _EMIT_CHOICES:
                raise ConfigError(f"source {doc.get('name')!r}: unknown emit {e!r}")
        return cls(
            name=doc["name"],
            format=fmt,
            path=(base / doc["path"]).resolve(),
            lenient=bool(doc.get("lenient", False)),
            pretag_detailed=doc.get("pretag_detailed"),
            emit=emit,
        )


@dataclass
class PipelineConfig:
    """Single JSON config document; the seed is mandatory by design so no
    run can silently depend on wall-clock randomness."""

    seed: int
    sources: list[SourceConfig]
    mix_path: Path
    split: Split = Split.PRETRAIN
    template_path: Optional[Path] = None
    lexicon_dir: Optional[Path] = None
    verify_path: Optional[Path] = None
    coord_bins: int = DEFAULT_COORD_BINS
    dedup_iou: float = 0.9
    budget: int = 4096
    jobs: int = 1
    figures: bool = True
    plan_scale: Optional[str] = None

    @classmethod
    def load(cls, path: Path) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        base = path.parent
        if "seed" not in doc:
            raise ConfigError(f"{path}: config must set an explicit seed")

        def resolve(key: str) -> Optional[Path]:
            if doc.get(key) is None:
                return None
            p = (base / doc[key]).resolve()
            if not p.exists():
                raise ConfigError(f"{path}: {key} does not exist: {p}")
            return p

        mix_path = resolve("mix")
        if mix_path is None:
            raise ConfigError(f"{path}: config must name a mix file")
        cfg = cls(
            seed=int(doc["seed"]),
            sources=[SourceConfig.from_dict(s, base) for s in doc.get("sources", [])],
            mix_path=mix_path,
            split=Split(doc.get("split", "pretrain")),
            template_path=resolve("templates"),
            lexicon_dir=resolve("lexicons"),
            verify_path=resolve("verify"),
            coord_bins=int(doc.get("coord_bins", DEFAULT_COORD_BINS)),
            dedup_iou=float(doc.get("dedup_iou", 0.9)),
            budget=int(doc.get("budget", 4096)),
            jobs=int(doc.get("jobs", 1)),
            figures=bool(doc.get("figures", True)),
            plan_scale=doc.get("plan_scale"),
        )
        if cfg.budget not in STAGE_BUDGETS:
            raise ConfigError(
                f"{path}: budget must be one of {STAGE_BUDGETS}, got {cfg.budget}"
            )
        if cfg.plan_scale is not None and cfg.plan_scale not in MODEL_SCALES:
            raise ConfigError(
                f"{path}: plan_scale must be one of {MODEL_SCALES}, got {cfg.plan_scale!r}"
            )
        return cfg

    def lexicon(self) -> Lexicon:
        if self.lexicon_dir is not None:
            return Lexicon.from_dir(self.lexicon_dir)
        return Lexicon.default()

    def template_pack(self) -> TemplatePack:
        if self.template_path is not None:
            return TemplatePack.load(self.template_path)
        return TemplatePack.default()


def _pmap(fn: Callable, items: Iterable, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _stage_ingest(cfg: PipelineConfig, out: Path, log: LogFn) -> None:
    for sc in cfg.sources:
        src = SourceDescriptor(sc.name, sc.format, sc.path)
        dest = out / "ingest" / sc.name
        if sc.format in _IMAGE_FORMATS:
            if sc.format is SourceFormat.REGION_DESCRIPTION_JSON:
                images, ledger = INGESTERS[sc.format](
                    src, sc.lenient, pretag_detailed=sc.pretag_detailed
                )
            else:
                images, ledger = INGESTERS[sc.format](src, sc.lenient)
            write_jsonl(dest / "images.jsonl", (image_to_row(im) for im in images))
            write_jsonl(
                dest / "regions.jsonl",
                (row for im in images for row in region_rows(im)),
            )
        elif sc.format is SourceFormat.CAPTION_JSONL:
            images, samples, ledger = ingest_captions(src, sc.lenient)
            write_jsonl(dest / "images.jsonl", (image_to_row(im) for im in images))
            write_jsonl(dest / "samples.jsonl", (sample_to_row(s) for s in samples))
        else:
            samples, ledger = ingest_text_only(src, sc.lenient)
            write_jsonl(dest / "samples.jsonl", (sample_to_row(s) for s in samples))
        write_json(dest / "ledger.json", ledger.as_dict())
        log("ingest", "source_done", {"source": sc.name, **ledger.as_dict()})


def _stage_curate(cfg: PipelineConfig, out: Path, log: LogFn) -> None:
    lexicon = cfg.lexicon()
    all_images: list[AnnotatedImage] = []
    samples: list[TaskSample] = []
    reg_ledger = CurationLedger()
    det_ledger = CurationLedger()
    grounding_batches: list[list[AnnotatedImage]] = []
    label_pool: set[str] = set()

    for sc in cfg.sources:
        src_dir = out / "ingest" / sc.name
        if not (src_dir / "images.jsonl").is_file():
            continue
        images = load_annotated_images(src_dir)
        all_images.extend(images)
        if "detection" in sc.emit or "grounding" in sc.emit:
            annotated = [im for im in images if im.regions]

            def _merge_one(im: AnnotatedImage):
                led = CurationLedger()
                s = merge_to_detection(im, lexicon, cfg.dedup_iou, led)
                return s, led

            merged = _pmap(_merge_one, annotated, cfg.jobs)
            for s, led in merged:
                label_pool.update(e["label"] for e in s.payload["entries"])
                det_ledger.merge(led)
                if "detection" in sc.emit:
                    samples.append(s)
        if "rec" in sc.emit:
            for im in images:
                samples.extend(to_rec_samples(im))
        if "reg" in sc.emit:
            for reg_samples, led in _pmap(
                lambda im: curate_reg([im], lexicon), images, cfg.jobs
            ):
                samples.extend(reg_samples)
                reg_ledger.merge(led)
        if "grounding" in sc.emit:
            grounding_batches.append(images)

    pool = sorted(label_pool)
    for images in grounding_batches:
        samples.extend(
            reorganize_grounding(
                images, pool, cfg.seed, lexicon, cfg.dedup_iou
            )
        )

    dest = out / "curate"
    write_jsonl(dest / "images.jsonl", (image_to_row(im) for im in all_images))
    write_jsonl(dest / "samples.jsonl", (sample_to_row(s) for s in samples))
    write_json(
        dest / "ledger.json",
        {"reg": reg_ledger.as_dict(), "detection": det_ledger.as_dict()},
    )
    log(
        "curate",
        "done",
        {"samples": len(samples), "images": len(all_images), "labels": len(pool)},
    )


def _collect_samples(cfg: PipelineConfig, out: Path) -> list[TaskSample]:
    paths = [out / "curate" / "samples.jsonl"]
    for sc in cfg.sources:
        if sc.format not in _IMAGE_FORMATS:
            paths.append(out / "ingest" / sc.name / "samples.jsonl")
    samples = []
    for p in paths:
        if p.is_file():
            samples.extend(sample_from_row(row) for row in read_jsonl(p))
    return samples


def _pick_spec(cfg: PipelineConfig) -> MixSpec:
    specs = load_mixspecs(cfg.mix_path)
    matching = [s for s in specs if s.split is cfg.split]
    if not matching:
        raise ConfigError(
            f"{cfg.mix_path}: no mix spec for split {cfg.split.value!r}"
        )
    return matching[0]


def _stage_consolidate(cfg: PipelineConfig, out: Path, log: LogFn) -> None:
    curate_samples = out / "curate" / "samples.jsonl"
    if not curate_samples.is_file():
        raise DataError("consolidate: curate stage output missing")
    spec = _pick_spec(cfg)
    selected, manifest = consolidate(spec, _collect_samples(cfg, out))
    dest = out / "consolidate"
    write_jsonl(dest / "samples.jsonl", (sample_to_row(s) for s in selected))
    write_json(dest / "manifest.json", manifest.as_dict())
    log("consolidate", "done", {"total": manifest.total, "deduped": manifest.deduped})
    if cfg.verify_path is not None:
        verdict = verify_manifest(manifest.as_dict(), read_json(cfg.verify_path))
        write_json(dest / "verify.json", verdict)
        if not verdict["passed"]:
            raise VerificationError(
                "consolidate: manifest verification failed "
                f"({sum(1 for r in verdict['rows'] if r['status'] == 'fail')} rows)"
            )


def _stage_render(cfg: PipelineConfig, out: Path, log: LogFn) -> None:
    samples_path = out / "consolidate" / "samples.jsonl"
    if not samples_path.is_file():
        raise DataError("render: consolidate stage output missing")
    pack = cfg.template_pack()
    sizes: dict[str, tuple[int, int]] = {}
    images_path = out / "curate" / "images.jsonl"
    if images_path.is_file():
        for row in read_jsonl(images_path):
            sizes[row["image_id"]] = (row["width"], row["height"])

    records = []
    over_budget: list[str] = []
    for row in read_jsonl(samples_path):
        sample = sample_from_row(row)
        size = sizes.get(sample.image_ref) if sample.image_ref else None
        if sample.image_ref is not None and size is None:
            raise DataError(f"render: no image metadata for {sample.image_ref!r}")
        rec = serialize_sample(sample, pack, size, cfg.seed, cfg.coord_bins)
        _, over = estimate_length(rec, cfg.budget)
        if over:
            over_budget.append(rec.sample_id)
        records.append(rec)

    dest = out / "render"
    write_jsonl(dest / "conversations.jsonl", (conversation_to_row(r) for r in records))
    write_json(
        dest / "render_report.json",
        {
            "rendered": len(records),
            "budget": cfg.budget,
            "over_budget": len(over_budget),
            "over_budget_ids": over_budget,
        },
    )
    log("render", "done", {"rendered": len(records), "over_budget": len(over_budget)})


def _stage_report(cfg: PipelineConfig, out: Path, log: LogFn) -> None:
    samples_path = out / "consolidate" / "samples.jsonl"
    if not samples_path.is_file():
        raise DataError("report: consolidate stage output missing")
    stats = corpus_stats(sample_from_row(r) for r in read_jsonl(samples_path))
    dest = out / "report"
    write_json(dest / "stats.json", stats)
    report_mod.stats_csv(stats, dest / "stats.csv")
    if cfg.figures:
        report_mod.render_stats_figures(stats, dest / "figures")
    if cfg.plan_scale:
        plans = [p.as_dict() for p in default_plans(cfg.plan_scale)]
        write_json(dest / "plans.json", plans)
    log("report", "done", {"total": stats["total"]})


_STAGE_FNS = {
    "ingest": _stage_ingest,
    "curate": _stage_curate,
    "consolidate": _stage_consolidate,
    "render": _stage_render,
    "report": _stage_report,
}


def determinism_hash(out: Path) -> str:
    """Hash of every JSONL/JSON artifact under the stage directories."""
    import hashlib

    h = hashlib.sha256()
    for stage in STAGES:
        stage_dir = Path(out) / stage
        if stage_dir.is_dir():
            h.update(stage.encode("utf-8"))
            h.update(tree_hash(stage_dir).encode("utf-8"))
    return h.hexdigest()


def run_pipeline(
    cfg: PipelineConfig,
    out: Path,
    stages: Optional[Iterable[str]] = None,
    jobs: Optional[int] = None,
    log: Optional[LogFn] = None,
) -> dict[str, Any]:
    """Run the selected stages in order; returns a summary with the
    determinism hash over everything currently in the output tree."""
    log = log or _silent_log
    out = Path(out)
    selected = list(stages) if stages else list(STAGES)
    for name in selected:
        if name not in STAGES:
            raise ConfigError(f"unknown stage {name!r}; expected one of {STAGES}")
    if jobs is not None:
        cfg.jobs = jobs
    ordered = [s for s in STAGES if s in selected]
    for name in ordered:
        _STAGE_FNS[name](cfg, out, log)
        log(name, "stage_complete", {})
    summary = {
        "stages": ordered,
        "seed": cfg.seed,
        "jobs": cfg.jobs,
        "hash": determinism_hash(out),
    }
    write_json(out / "pipeline_summary.json", summary)
    return summary
