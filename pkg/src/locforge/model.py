"""Canonical in-memory data model and its JSONL row forms.

All types are immutable after construction and safe to share between
workers. Geometry lives in one of two coordinate spaces:

* ``AbsolutePixels``: raw annotation coordinates, bounded by the owning
  image's width/height.
* ``NormalizedGrid(bins)``: integer coordinates in ``[0, bins]``, the
  space used for textual coordinates inside conversations.

The on-disk unit everywhere is JSONL (UTF-8, one object per line):

* images.jsonl         {"image_id", "width", "height", "uri"}
* regions.jsonl        {"image_id", "bbox": [x1,y1,x2,y2] | null,
                        "expression", "category", "source"}
                       (bbox null marks a negative expression: a phrase
                       annotated as having no matching region)
* samples.jsonl        {"sample_id", "kind", "image_id", "payload"}
* conversations.jsonl  {"sample_id", "image_id", "turns": [{"role", "text"}]}
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .errors import (
    InvertedBoxError,
    NonIntegerGridCoordinateError,
    OutOfBoundsError,
)

DEFAULT_COORD_BINS = 1000


# ---------------------------------------------------------------------------
# coordinate spaces and boxes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AbsolutePixels:
    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return "AbsolutePixels"


@dataclass(frozen=True)
class NormalizedGrid:
    bins: int

    def __post_init__(self) -> None:
        if self.bins < 2:
            raise ValueError(f"grid needs at least 2 bins, got {self.bins}")


Space = Union[AbsolutePixels, NormalizedGrid]

ABS = AbsolutePixels()


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle tagged with its coordinate space."""

    x1: float
    y1: float
    x2: float
    y2: float
    space: Space = ABS

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def coords(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def validate_box(box: Box, width: float, height: float) -> Box:
    """Check box invariants against the owning image; never clamps.

    Raises InvertedBoxError, OutOfBoundsError, or
    NonIntegerGridCoordinateError; returns the box unchanged when valid.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"image extent must be positive, got {width}x{height}")
    if box.x1 > box.x2 or box.y1 > box.y2:
        raise InvertedBoxError(f"inverted box {box.coords()}")
    if isinstance(box.space, NormalizedGrid):
        bins = box.space.bins
        for c in box.coords():
            if float(c) != int(c):
                raise NonIntegerGridCoordinateError(
                    f"grid coordinate {c!r} in {box.coords()} is not an integer"
                )
            if not 0 <= c <= bins:
                raise OutOfBoundsError(
                    f"grid coordinate {c} outside [0, {bins}]"
                )
    else:
        if box.x1 < 0 or box.y1 < 0 or box.x2 > width or box.y2 > height:
            raise OutOfBoundsError(
                f"box {box.coords()} outside image {width}x{height}"
            )
    return box


def _round_half_up(v: float) -> int:
    # round() would round halves to even; half-up keeps the quantizer
    # monotone so a box at least one cell wide can never collapse.
    return math.floor(v + 0.5)


def to_grid(box: Box, width: float, height: float, bins: int = DEFAULT_COORD_BINS) -> Box:
    """Quantize an absolute-pixel box onto the normalized integer grid.

    Each coordinate maps to round(coord / extent * bins). A box narrower
    than one grid cell can collapse to zero width/height under rounding;
    such boxes are expanded to one cell instead of rejected so curation
    never silently drops annotations.
    """
    if not isinstance(box.space, AbsolutePixels):
        raise ValueError("to_grid expects an absolute-pixel box")
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    validate_box(box, width, height)

    def axis(lo: float, hi: float, extent: float) -> tuple[int, int]:
        s_lo = lo / extent * bins
        s_hi = hi / extent * bins
        g_lo = _round_half_up(s_lo)
        g_hi = _round_half_up(s_hi)
        if g_lo == g_hi:
            # expand to the one grid cell the original edge sits in;
            # anchoring at floor(s_lo) keeps the round-trip error of
            # every coordinate within one cell
            cell = min(math.floor(s_lo), bins - 1)
            g_lo, g_hi = cell, cell + 1
        return g_lo, g_hi

    gx1, gx2 = axis(box.x1, box.x2, width)
    gy1, gy2 = axis(box.y1, box.y2, height)
    return Box(gx1, gy1, gx2, gy2, NormalizedGrid(bins))


def from_grid(box: Box, width: float, height: float) -> Box:
    """Map a grid box back to absolute pixels (inverse scaling)."""
    if not isinstance(box.space, NormalizedGrid):
        raise ValueError("from_grid expects a grid-space box")
    bins = box.space.bins
    validate_box(box, width, height)
    return Box(
        box.x1 / bins * width,
        box.y1 / bins * height,
        box.x2 / bins * width,
        box.y2 / bins * height,
        ABS,
    )


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

class DetailLevel(enum.Enum):
    CLASS_LEVEL = "class_level"
    CONCISE = "concise"
    DETAILED = "detailed"
    UNCLASSIFIED = "unclassified"


_WS_RE = re.compile(r"\s+")


def normalize_ws(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


@dataclass(frozen=True)
class RegionAnnotation:
    """One referring phrase / description attached to one box."""

    box: Box
    expression: str
    category: Optional[str] = None
    detail_level: DetailLevel = DetailLevel.UNCLASSIFIED
    source: str = ""

    def __post_init__(self) -> None:
        if not normalize_ws(self.expression):
            raise ValueError("region expression is empty")


@dataclass(frozen=True)
class AnnotatedImage:
    """One image with all region annotations; the unit of curation.

    ``negatives`` holds expressions annotated as matching nothing in the
    image (zero-box referring records); they feed grounding negatives.
    """

    image_id: str
    width: int
    height: int
    uri: str = ""
    regions: tuple[RegionAnnotation, ...] = ()
    negatives: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"{self.image_id}: non-positive extent")
        for r in self.regions:
            validate_box(r.box, self.width, self.height)


# ---------------------------------------------------------------------------
# task samples
# ---------------------------------------------------------------------------

class TaskKind(enum.Enum):
    CAPTION = "caption"
    REC = "rec"
    REG = "reg"
    DETECTION = "detection"
    GROUNDING = "grounding"
    COUNTING = "counting"
    GENERAL_VQA = "general_vqa"
    SCENE_TEXT_VQA = "scene_text_vqa"
    DOC_VQA = "doc_vqa"
    LANGUAGE_ONLY = "language_only"
    VL_INSTRUCTION = "vl_instruction"


MAX_GROUNDING_CATEGORIES = 10


@dataclass(frozen=True)
class TaskSample:
    """Typed task record; payload layout depends on ``kind``.

    Payloads are JSON-ready dicts (boxes as [x1,y1,x2,y2] lists in
    absolute pixels):

    * caption:      {"text"}
    * rec:          {"expression", "bbox"}
    * reg:          {"expression", "bbox", "detail_level"}
    * detection:    {"entries": [{"label", "bboxes": [[...], ...]}]}
    * grounding:    {"entries": [{"label", "bboxes"}]} (bboxes may be [])
    * counting:     {"expression", "bboxes"}
    * *_vqa:        {"question", "answer"}
    * language_only / vl_instruction: {"turns": [{"role", "text"}]}
    """

    sample_id: str
    kind: TaskKind
    image_ref: Optional[str]
    payload: Mapping[str, Any]

    def __post_init__(self) -> None:
        if self.kind is TaskKind.LANGUAGE_ONLY:
            if self.image_ref is not None:
                raise ValueError(f"{self.sample_id}: language-only sample with image_ref")
        elif self.image_ref is None:
            raise ValueError(f"{self.sample_id}: {self.kind.value} sample needs an image_ref")
        if self.kind in (TaskKind.DETECTION, TaskKind.GROUNDING):
            labels = [e["label"] for e in self.payload.get("entries", ())]
            if len(labels) != len(set(labels)):
                raise ValueError(f"{self.sample_id}: duplicate labels in payload")
            if self.kind is TaskKind.GROUNDING and len(labels) > MAX_GROUNDING_CATEGORIES:
                raise ValueError(
                    f"{self.sample_id}: grounding sample with {len(labels)} > "
                    f"{MAX_GROUNDING_CATEGORIES} categories"
                )


def entries_payload(entries: Sequence[tuple[str, Sequence[Box]]]) -> dict[str, Any]:
    return {
        "entries": [
            {"label": label, "bboxes": [list(b.coords()) for b in boxes]}
            for label, boxes in entries
        ]
    }


# ---------------------------------------------------------------------------
# conversations
# ---------------------------------------------------------------------------

class Role(enum.Enum):
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Turn:
    role: Role
    text: str


_BRACKET_GROUP_RE = re.compile(r"\[[^\[\]]*\]")


def bracket_quads(text: str) -> list[tuple[str, ...]]:
    """All 4-element bracket groups in ``text`` as raw string tuples."""
    quads = []
    for m in _BRACKET_GROUP_RE.finditer(text):
        parts = [p.strip() for p in m.group(0)[1:-1].split(",")]
        if len(parts) == 4:
            quads.append(tuple(parts))
    return quads


def _quad_is_valid_grid_box(parts: tuple[str, ...]) -> bool:
    try:
        x1, y1, x2, y2 = (int(p) for p in parts)
    except ValueError:
        return False
    return 0 <= x1 <= x2 and 0 <= y1 <= y2


@dataclass(frozen=True)
class ConversationRecord:
    """Serialized multi-round instruction sample with textual coordinates."""

    sample_id: str
    image_ref: Optional[str]
    turns: tuple[Turn, ...]
    token_estimate: int = 0

    def __post_init__(self) -> None:
        if self.token_estimate < 0:
            raise ValueError(f"{self.sample_id}: negative token estimate")
        for i, turn in enumerate(self.turns):
            want = Role.USER if i % 2 == 0 else Role.ASSISTANT
            if turn.role is not want:
                raise ValueError(
                    f"{self.sample_id}: turn {i} is {turn.role.value}, "
                    f"expected {want.value}"
                )
            if turn.role is Role.ASSISTANT:
                for quad in bracket_quads(turn.text):
                    if not _quad_is_valid_grid_box(quad):
                        raise ValueError(
                            f"{self.sample_id}: assistant bracket group "
                            f"{quad} is not a valid grid box"
                        )


# ---------------------------------------------------------------------------
# JSONL row codecs
# ---------------------------------------------------------------------------

def image_to_row(img: AnnotatedImage) -> dict[str, Any]:
    return {
        "image_id": img.image_id,
        "width": img.width,
        "height": img.height,
        "uri": img.uri,
    }


def image_from_row(row: Mapping[str, Any]) -> AnnotatedImage:
    return AnnotatedImage(
        image_id=row["image_id"],
        width=row["width"],
        height=row["height"],
        uri=row.get("uri", ""),
    )


def region_rows(img: AnnotatedImage) -> Iterable[dict[str, Any]]:
    for r in img.regions:
        row: dict[str, Any] = {
            "image_id": img.image_id,
            "bbox": [r.box.x1, r.box.y1, r.box.x2, r.box.y2],
            "expression": r.expression,
            "category": r.category,
            "source": r.source,
        }
        if r.detail_level is not DetailLevel.UNCLASSIFIED:
            row["detail_level"] = r.detail_level.value
        yield row
    for expr in img.negatives:
        yield {
            "image_id": img.image_id,
            "bbox": None,
            "expression": expr,
            "category": None,
            "source": "",
        }


def region_from_row(row: Mapping[str, Any]) -> RegionAnnotation:
    bbox = row["bbox"]
    return RegionAnnotation(
        box=Box(*bbox),
        expression=row["expression"],
        category=row.get("category"),
        detail_level=DetailLevel(row.get("detail_level", "unclassified")),
        source=row.get("source", ""),
    )


def sample_to_row(s: TaskSample) -> dict[str, Any]:
    return {
        "sample_id": s.sample_id,
        "kind": s.kind.value,
        "image_id": s.image_ref,
        "payload": dict(s.payload),
    }


def sample_from_row(row: Mapping[str, Any]) -> TaskSample:
    return TaskSample(
        sample_id=row["sample_id"],
        kind=TaskKind(row["kind"]),
        image_ref=row.get("image_id"),
        payload=row["payload"],
    )


def conversation_to_row(rec: ConversationRecord) -> dict[str, Any]:
    return {
        "sample_id": rec.sample_id,
        "image_id": rec.image_ref,
        "turns": [{"role": t.role.value, "text": t.text} for t in rec.turns],
    }


def conversation_from_row(row: Mapping[str, Any]) -> ConversationRecord:
    turns = tuple(Turn(Role(t["role"]), t["text"]) for t in row["turns"])
    return ConversationRecord(
        sample_id=row["sample_id"],
        image_ref=row.get("image_id"),
        turns=turns,
        token_estimate=row.get("token_estimate", 0),
    )
