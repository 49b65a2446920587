"""Adapters from external annotation formats into the canonical model.

Each adapter reads only the documented field subset of its format and
ignores unknown fields. Emission order is the source record order, so a
given input file always produces byte-identical canonical output.
Image ids are namespaced by source name (``refcoco/42``), which makes
output streams from different sources safe to merge.

Strict mode raises on the first bad record. Lenient mode clamps boxes
that overflow image bounds by at most ``CLAMP_TOLERANCE_PX`` pixels
(real region-description exports contain such noise), drops anything
worse with a ledgered reason, and skips dangling references.

Input formats:

* coco detection json: one JSON document with ``images`` (id, width,
  height, file_name), ``annotations`` (image_id, category_id, bbox as
  [x, y, w, h]) and ``categories`` (id, name).
* referring json: {"records": [{"image": {...}, "expressions": [...],
  "bboxes": [[x1,y1,x2,y2], ...]}]}; every (expression, box) pair
  becomes a region, zero-box expressions become negative markers.
* region description json: {"records": [{"image": {...}, "regions":
  [{"phrase", "bbox": [x1,y1,x2,y2]}]}]}.
* caption jsonl: one {"image_id", "width", "height", "uri", "caption"}
  per line.
* plain text jsonl: one {"turns": [{"role", "text"}, ...]} per line.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import (
    ConfigError,
    DanglingCategoryIdError,
    DanglingImageIdError,
    EmptyExpressionError,
    HasImageInTextSourceError,
    InvertedBoxError,
    MalformedJsonError,
    MalformedRecordError,
    OutOfBoundsError,
)
from .jsonl import read_jsonl
from .model import (
    AnnotatedImage,
    Box,
    DetailLevel,
    RegionAnnotation,
    TaskKind,
    TaskSample,
    normalize_ws,
)

CLAMP_TOLERANCE_PX = 2.0

# dataset names this toolkit is normally pointed at; adapters accept any
# name so synthetic fixtures and future sources need no code change
KNOWN_SOURCES = frozenset(
    """
    objects365 mscoco v3det visual_genome refcoco refcoco+ refcocog
    grefcoco osprey flickr30k_entities sharegpt4v textcaps ultrachat
    flan_mini openorca sharegpt metamathqa mathinstruct wizardcoder
    llava allava lvis_instruct4v vqav2 gqa ok_vqa a_okvqa sqa vizwiz
    textvqa ocr_vqa ai2d synthdog dvqa chartqa docvqa infovqa deepform
    klc wtq tabfact open_images fscd
    """.split()
)

# sources whose region descriptions arrive already written as detailed
# captions; they skip the detail classifier
PRETAGGED_DETAILED_SOURCES = frozenset({"osprey", "flickr30k_entities"})


class SourceFormat(enum.Enum):
    COCO_DETECTION_JSON = "coco_detection_json"
    REGION_DESCRIPTION_JSON = "region_description_json"
    REFERRING_JSON = "referring_json"
    CAPTION_JSONL = "caption_jsonl"
    PLAIN_TEXT_JSONL = "plain_text_jsonl"


@dataclass(frozen=True)
class SourceDescriptor:
    name: str
    format: SourceFormat
    path: Path

    def __post_init__(self) -> None:
        if not Path(self.path).is_file():
            raise ConfigError(f"source {self.name!r}: no such file {self.path}")


@dataclass
class IngestLedger:
    """Lossless-ingest accounting: expanded == emitted + dropped."""

    read: int = 0
    expanded: int = 0
    emitted: int = 0
    negatives: int = 0
    clamped: int = 0
    dropped: int = 0
    reasons: list[str] = field(default_factory=list)

    def drop(self, reason: str) -> None:
        self.dropped += 1
        self.reasons.append(reason)

    def as_dict(self) -> dict[str, object]:
        return {
            "read": self.read,
            "expanded": self.expanded,
            "emitted": self.emitted,
            "negatives": self.negatives,
            "clamped": self.clamped,
            "dropped": self.dropped,
            "reasons": self.reasons,
        }


def _load_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedJsonError(f"{path}: {exc}") from exc


def _records(doc: Any, path: Path) -> list[Mapping[str, Any]]:
    if isinstance(doc, list):
        return doc
    if isinstance(doc, dict) and isinstance(doc.get("records"), list):
        return doc["records"]
    raise MalformedJsonError(f"{path}: expected a record list or {{'records': [...]}}")


def _fit_box(
    coords: tuple[float, float, float, float],
    width: float,
    height: float,
    lenient: bool,
    ledger: IngestLedger,
    where: str,
) -> Optional[Box]:
    """Validate, clamp (lenient, <= tolerance), or reject one box."""
    x1, y1, x2, y2 = coords
    if x1 > x2 or y1 > y2:
        if lenient:
            ledger.drop(f"{where}: inverted box {coords}")
            return None
        raise InvertedBoxError(f"{where}: inverted box {coords}")
    inside = x1 >= 0 and y1 >= 0 and x2 <= width and y2 <= height
    if inside:
        return Box(x1, y1, x2, y2)
    overflow = max(0 - x1, 0 - y1, x2 - width, y2 - height)
    if lenient and overflow <= CLAMP_TOLERANCE_PX:
        ledger.clamped += 1
        return Box(
            min(max(x1, 0.0), width),
            min(max(y1, 0.0), height),
            max(min(x2, width), 0.0),
            max(min(y2, height), 0.0),
        )
    if lenient:
        ledger.drop(f"{where}: box {coords} overflows by {overflow:.1f}px")
        return None
    raise OutOfBoundsError(f"{where}: box {coords} outside {width}x{height}")


class _ImageTable:
    """Accumulates regions/negatives per image, preserving source order."""

    def __init__(self, source: str) -> None:
        self.source = source
        self._order: list[str] = []
        self._meta: dict[str, tuple[int, int, str]] = {}
        self._regions: dict[str, list[RegionAnnotation]] = {}
        self._negatives: dict[str, list[str]] = {}

    def add_image(self, raw_id: Any, width: int, height: int, uri: str = "") -> str:
        image_id = f"{self.source}/{raw_id}"
        if image_id not in self._meta:
            self._order.append(image_id)
            self._meta[image_id] = (int(width), int(height), uri)
            self._regions[image_id] = []
            self._negatives[image_id] = []
        return image_id

    def size(self, image_id: str) -> tuple[int, int]:
        w, h, _ = self._meta[image_id]
        return w, h

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._meta

    def add_region(self, image_id: str, region: RegionAnnotation) -> None:
        self._regions[image_id].append(region)

    def add_negative(self, image_id: str, expression: str) -> None:
        self._negatives[image_id].append(expression)

    def build(self) -> list[AnnotatedImage]:
        return [
            AnnotatedImage(
                image_id=image_id,
                width=self._meta[image_id][0],
                height=self._meta[image_id][1],
                uri=self._meta[image_id][2],
                regions=tuple(self._regions[image_id]),
                negatives=tuple(self._negatives[image_id]),
            )
            for image_id in self._order
        ]


def ingest_coco_detection(
    src: SourceDescriptor, lenient: bool = False
) -> tuple[list[AnnotatedImage], IngestLedger]:
    """COCO-style detection annotations; [x,y,w,h] boxes become corners.

    Images with zero annotations are still emitted: they supply the
    negatives that zero-category grounding entries need.
    """
    doc = _load_json(src.path)
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise MalformedJsonError(f"{src.path}: missing {key!r}")
    table = _ImageTable(src.name)
    ledger = IngestLedger()
    for img in doc["images"]:
        table.add_image(img["id"], img["width"], img["height"], img.get("file_name", ""))
    categories = {c["id"]: c["name"] for c in doc["categories"]}

    for i, ann in enumerate(doc["annotations"]):
        ledger.read += 1
        ledger.expanded += 1
        where = f"{Path(src.path).name}:annotations[{i}]"
        image_id = f"{src.name}/{ann.get('image_id')}"
        if image_id not in table:
            if lenient:
                ledger.drop(f"{where}: unknown image_id {ann.get('image_id')!r}")
                continue
            raise DanglingImageIdError(f"{where}: unknown image_id {ann.get('image_id')!r}")
        if ann.get("category_id") not in categories:
            if lenient:
                ledger.drop(f"{where}: unknown category_id {ann.get('category_id')!r}")
                continue
            raise DanglingCategoryIdError(
                f"{where}: unknown category_id {ann.get('category_id')!r}"
            )
        name = categories[ann["category_id"]]
        x, y, w, h = ann["bbox"]
        size = table.size(image_id)
        box = _fit_box((x, y, x + w, y + h), *size, lenient, ledger, where)
        if box is None:
            continue
        table.add_region(
            image_id,
            RegionAnnotation(box=box, expression=name, category=name, source=src.name),
        )
        ledger.emitted += 1
    return table.build(), ledger


def _ingest_phrase_regions(
    src: SourceDescriptor,
    lenient: bool,
    pretag_detailed: bool,
) -> tuple[list[AnnotatedImage], IngestLedger]:
    doc = _load_json(src.path)
    table = _ImageTable(src.name)
    ledger = IngestLedger()
    detail = DetailLevel.DETAILED if pretag_detailed else DetailLevel.UNCLASSIFIED

    for i, rec in enumerate(_records(doc, src.path)):
        ledger.read += 1
        where = f"{Path(src.path).name}:records[{i}]"
        img = rec.get("image")
        if not isinstance(img, dict) or "image_id" not in img:
            raise MalformedRecordError(f"{where}: missing image")
        image_id = table.add_image(
            img["image_id"], img["width"], img["height"], img.get("uri", "")
        )
        size = table.size(image_id)

        if src.format is SourceFormat.REFERRING_JSON:
            expressions = rec.get("expressions", [])
            bboxes = rec.get("bboxes", [])
            if not expressions:
                raise MalformedRecordError(f"{where}: no expressions")
            if not bboxes:
                # no-target record: the expressions are annotated negatives
                for expr in expressions:
                    expr_norm = normalize_ws(expr)
                    if not expr_norm:
                        raise EmptyExpressionError(f"{where}: empty expression")
                    table.add_negative(image_id, expr_norm)
                    ledger.negatives += 1
                continue
            pairs = [(e, b) for e in expressions for b in bboxes]
        else:
            pairs = [(r.get("phrase", ""), r.get("bbox")) for r in rec.get("regions", [])]

        for j, (expr, bbox) in enumerate(pairs):
            ledger.expanded += 1
            expr_norm = normalize_ws(expr)
            if not expr_norm:
                if lenient:
                    ledger.drop(f"{where}[{j}]: empty expression")
                    continue
                raise EmptyExpressionError(f"{where}[{j}]: empty expression")
            box = _fit_box(tuple(bbox), *size, lenient, ledger, f"{where}[{j}]")
            if box is None:
                continue
            table.add_region(
                image_id,
                RegionAnnotation(
                    box=box,
                    expression=expr_norm,
                    category=None,
                    detail_level=detail,
                    source=src.name,
                ),
            )
            ledger.emitted += 1
    return table.build(), ledger


def ingest_referring(
    src: SourceDescriptor, lenient: bool = False
) -> tuple[list[AnnotatedImage], IngestLedger]:
    """Referring-expression records; fans out (expression, box) pairs.

    Records carrying zero boxes mark their expressions as image-level
    negatives (no matching target).
    """
    return _ingest_phrase_regions(src, lenient, pretag_detailed=False)


def ingest_region_descriptions(
    src: SourceDescriptor, lenient: bool = False, pretag_detailed: Optional[bool] = None
) -> tuple[list[AnnotatedImage], IngestLedger]:
    """Region-description records (phrase + box per region).

    Duplicate (phrase, box) pairs are emitted as-is; deduplication is
    curation's job. Sources known to ship full-sentence descriptions are
    tagged detailed up front and skip the classifier.
    """
    if pretag_detailed is None:
        pretag_detailed = src.name in PRETAGGED_DETAILED_SOURCES
    return _ingest_phrase_regions(src, lenient, pretag_detailed)


def ingest_text_only(
    src: SourceDescriptor, lenient: bool = False
) -> tuple[list[TaskSample], IngestLedger]:
    """Pure-text dialogues into language-only samples, order preserved."""
    samples = []
    ledger = IngestLedger()
    for i, row in enumerate(read_jsonl(Path(src.path))):
        ledger.read += 1
        ledger.expanded += 1
        where = f"{Path(src.path).name}:{i}"
        if "image" in row or "image_id" in row:
            if lenient:
                ledger.drop(f"{where}: image field in text-only source")
                continue
            raise HasImageInTextSourceError(f"{where}: image field in text-only source")
        turns = row.get("turns")
        if not isinstance(turns, list) or not turns:
            raise MalformedRecordError(f"{where}: missing turns")
        for t in turns:
            if not isinstance(t, dict) or "role" not in t or "text" not in t:
                raise MalformedRecordError(f"{where}: malformed turn")
        samples.append(
            TaskSample(
                sample_id=f"{src.name}/{i}",
                kind=TaskKind.LANGUAGE_ONLY,
                image_ref=None,
                payload={"turns": [{"role": t["role"], "text": t["text"]} for t in turns]},
            )
        )
        ledger.emitted += 1
    return samples, ledger


def ingest_captions(
    src: SourceDescriptor, lenient: bool = False
) -> tuple[list[AnnotatedImage], list[TaskSample], IngestLedger]:
    """Caption rows into caption samples plus their image metadata."""
    table = _ImageTable(src.name)
    samples = []
    ledger = IngestLedger()
    for i, row in enumerate(read_jsonl(Path(src.path))):
        ledger.read += 1
        ledger.expanded += 1
        where = f"{Path(src.path).name}:{i}"
        caption = normalize_ws(str(row.get("caption", "")))
        if not caption or "image_id" not in row:
            if lenient:
                ledger.drop(f"{where}: missing caption or image_id")
                continue
            raise MalformedRecordError(f"{where}: missing caption or image_id")
        image_id = table.add_image(
            row["image_id"], row["width"], row["height"], row.get("uri", "")
        )
        samples.append(
            TaskSample(
                sample_id=f"{src.name}/{row['image_id']}#cap{i}",
                kind=TaskKind.CAPTION,
                image_ref=image_id,
                payload={"text": caption},
            )
        )
        ledger.emitted += 1
    return table.build(), samples, ledger


INGESTERS = {
    SourceFormat.COCO_DETECTION_JSON: ingest_coco_detection,
    SourceFormat.REFERRING_JSON: ingest_referring,
    SourceFormat.REGION_DESCRIPTION_JSON: ingest_region_descriptions,
    SourceFormat.PLAIN_TEXT_JSONL: ingest_text_only,
    SourceFormat.CAPTION_JSONL: ingest_captions,
}
