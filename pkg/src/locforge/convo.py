"""Textual-coordinate conversation protocol: render and parse.

Samples render to user/assistant turns whose boxes are integer
quadruples on the normalized grid written as ``[x1, y1, x2, y2]``.
Localization answers use one line per label::

    dog-[120, 40, 380, 520][400, 60, 640, 510]
    zebra-None

``None`` marks a queried label with no match. The parser accepts this
grammar strictly and falls back to a recovery scan (bracket groups
attached to the nearest preceding content word) for free-form model
output; recovery never invents coordinates.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import ConfigError, MissingTemplateError, NoBoxesFoundError
from .jsonl import derive_seed
from .model import (
    Box,
    ConversationRecord,
    DEFAULT_COORD_BINS,
    DetailLevel,
    NormalizedGrid,
    Role,
    TaskKind,
    TaskSample,
    Turn,
    to_grid,
)

TOKEN_SAFETY_FACTOR = 1.3
STAGE_BUDGETS = (2048, 4096)

_PASSTHROUGH_KINDS = (TaskKind.LANGUAGE_ONLY, TaskKind.VL_INSTRUCTION)

_REQUIRED_PLACEHOLDERS = {
    "rec": ("{expr}",),
    "reg": ("{box}",),
    "reg_detailed": ("{box}", "{phrase}"),
    "detection": ("{labels}",),
    "grounding": ("{labels}",),
    "counting": ("{expr}",),
    "general_vqa": ("{question}",),
    "scene_text_vqa": ("{question}",),
    "doc_vqa": ("{question}",),
    "caption": (),
}


@dataclass(frozen=True)
class TemplatePack:
    """Instruction paraphrases per task plus the responsive-phrase list."""

    templates: Mapping[str, Sequence[str]]
    responsive_phrases: Sequence[str] = ("more detailed",)

    def __post_init__(self) -> None:
        for key, placeholders in _REQUIRED_PLACEHOLDERS.items():
            options = self.templates.get(key, ())
            if not options:
                raise MissingTemplateError(f"no templates for {key!r}")
            for tpl in options:
                for ph in placeholders:
                    if ph not in tpl:
                        raise MissingTemplateError(
                            f"template for {key!r} lacks {ph}: {tpl!r}"
                        )
        if not self.responsive_phrases:
            raise MissingTemplateError("responsive phrase list is empty")

    @classmethod
    def load(cls, path: Path) -> "TemplatePack":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            templates=doc["templates"],
            responsive_phrases=doc.get("responsive_phrases", ["more detailed"]),
        )

    @classmethod
    def default(cls) -> "TemplatePack":
        with resources.as_file(
            resources.files("locforge").joinpath("data/templates.json")
        ) as path:
            return cls.load(Path(path))


def serialize_box(box: Box) -> str:
    """Grid box as ``[x1, y1, x2, y2]`` with base-10 integers."""
    if not isinstance(box.space, NormalizedGrid):
        raise ValueError("serialize_box expects a grid-space box")
    return "[%d, %d, %d, %d]" % (box.x1, box.y1, box.x2, box.y2)


def _grid(bbox: Sequence[float], size: tuple[int, int], bins: int) -> Box:
    w, h = size
    return to_grid(Box(*bbox), w, h, bins)


def _entries_text(
    entries: Sequence[Mapping[str, object]],
    size: tuple[int, int],
    bins: int,
) -> str:
    lines = []
    for e in entries:
        bboxes = e["bboxes"]
        if bboxes:
            boxes = "".join(serialize_box(_grid(b, size, bins)) for b in bboxes)
            lines.append(f"{e['label']}-{boxes}")
        else:
            lines.append(f"{e['label']}-None")
    return "\n".join(lines)


def serialize_sample(
    sample: TaskSample,
    pack: TemplatePack,
    image_size: Optional[tuple[int, int]],
    seed: int,
    bins: int = DEFAULT_COORD_BINS,
) -> ConversationRecord:
    """Render one task sample into a two-turn conversation.

    The instruction paraphrase (and the responsive phrase for detailed
    region descriptions) is a seeded per-sample choice, so rendering is
    reproducible and instruction wording still varies across samples.
    Dialogue kinds (language-only, VL instruction) pass their turns
    through unchanged.
    """
    rng = random.Random(derive_seed(seed, "render", sample.sample_id))
    payload = sample.payload

    if sample.kind in _PASSTHROUGH_KINDS:
        turns = tuple(
            Turn(Role(t["role"]), t["text"]) for t in payload["turns"]
        )
        return ConversationRecord(
            sample_id=sample.sample_id,
            image_ref=sample.image_ref,
            turns=turns,
            token_estimate=estimate_tokens(t.text for t in turns),
        )

    if image_size is None:
        raise ValueError(f"{sample.sample_id}: image size required for {sample.kind.value}")

    def pick(key: str) -> str:
        options = pack.templates.get(key)
        if not options:
            raise MissingTemplateError(f"no templates for {key!r}")
        return rng.choice(list(options))

    kind = sample.kind
    if kind is TaskKind.CAPTION:
        user = pick("caption")
        assistant = payload["text"]
    elif kind is TaskKind.REC:
        user = pick("rec").format(expr=payload["expression"])
        assistant = serialize_box(_grid(payload["bbox"], image_size, bins))
    elif kind is TaskKind.REG:
        box_text = serialize_box(_grid(payload["bbox"], image_size, bins))
        if payload.get("detail_level") == DetailLevel.DETAILED.value:
            phrase = rng.choice(list(pack.responsive_phrases))
            user = pick("reg_detailed").format(box=box_text, phrase=phrase)
        else:
            user = pick("reg").format(box=box_text)
        assistant = payload["expression"]
    elif kind in (TaskKind.DETECTION, TaskKind.GROUNDING):
        key = "detection" if kind is TaskKind.DETECTION else "grounding"
        labels = ", ".join(e["label"] for e in payload["entries"])
        user = pick(key).format(labels=labels)
        assistant = _entries_text(payload["entries"], image_size, bins)
    elif kind is TaskKind.COUNTING:
        user = pick("counting").format(expr=payload["expression"])
        boxes = "".join(
            serialize_box(_grid(b, image_size, bins)) for b in payload["bboxes"]
        )
        count = len(payload["bboxes"])
        assistant = f"{boxes} {count}" if boxes else str(count)
    else:
        key = kind.value
        user = pick(key).format(question=payload["question"])
        assistant = payload["answer"]

    turns = (Turn(Role.USER, user), Turn(Role.ASSISTANT, assistant))
    return ConversationRecord(
        sample_id=sample.sample_id,
        image_ref=sample.image_ref,
        turns=turns,
        token_estimate=estimate_tokens(t.text for t in turns),
    )


# ---------------------------------------------------------------------------
# length estimation
# ---------------------------------------------------------------------------

def estimate_tokens(texts) -> int:
    """Whitespace-token upper bound with a 1.3 safety factor."""
    raw = sum(len(t.split()) for t in texts)
    return math.ceil(raw * TOKEN_SAFETY_FACTOR)


def estimate_length(rec: ConversationRecord, budget: int) -> tuple[int, bool]:
    """(estimate, over-budget flag) for a rendered conversation."""
    if budget not in STAGE_BUDGETS:
        raise ConfigError(f"budget must be one of {STAGE_BUDGETS}, got {budget}")
    estimate = estimate_tokens(t.text for t in rec.turns)
    return estimate, estimate > budget


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_BOX_RE = re.compile(r"\[\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\]")
_ENTRY_RE = re.compile(
    r"^(?P<label>.+)-(?P<body>None|(?:\s*\[\s*-?\d+\s*(?:,\s*-?\d+\s*){3}\])+)\s*$"
)
_WORD_RE = re.compile(r"[A-Za-z][A-Za-z'\-]*")

# words skipped when attaching a recovered box to a label
_RECOVERY_STOPWORDS = frozenset(
    """
    a an the this that these those it its is are was were be been being
    at in on of to for with from by as and or not no yes sure okay ok
    here there where located location position positioned found appears
    appear see shown visible coordinates coordinate bounding box boxes
    region regions image picture photo frame answer response please i
    you we they he she can could will would there's it's
    """.split()
)

_FALLBACK_LABEL = "object"


@dataclass
class ParseResult:
    entries: list[tuple[str, list[Box]]]
    diagnostics: list[str] = field(default_factory=list)
    mode: str = "strict"

    def boxes(self) -> list[Box]:
        return [b for _, bs in self.entries for b in bs]


def _parse_strict(text: str, bins: int) -> Optional[list[tuple[str, list[Box]]]]:
    segments = [s for s in re.split(r"[\n;]+", text) if s.strip()]
    if not segments:
        return None
    entries = []
    for seg in segments:
        m = _ENTRY_RE.match(seg.strip())
        if not m:
            return None
        label = m.group("label").strip()
        if not label:
            return None
        body = m.group("body")
        if body == "None":
            entries.append((label, []))
        else:
            boxes = [
                Box(*(int(g) for g in bm.groups()), space=NormalizedGrid(bins))
                for bm in _BOX_RE.finditer(body)
            ]
            entries.append((label, boxes))
    return entries


def _nearest_label(text: str, upto: int, spans: list[tuple[int, int]]) -> Optional[str]:
    # walk content words backwards from the bracket group, skipping any
    # word inside an earlier bracket group
    best = None
    for m in _WORD_RE.finditer(text, 0, upto):
        if any(s <= m.start() < e for s, e in spans):
            continue
        word = m.group(0)
        if word.lower() in _RECOVERY_STOPWORDS:
            continue
        best = word
    return best


def parse_localization(text: str, bins: int = DEFAULT_COORD_BINS) -> ParseResult:
    """Extract (label, boxes) pairs from model-emitted text.

    Strict grammar first; on failure, every 4-integer bracket group in
    the text is recovered and attached to the nearest preceding content
    word, with one diagnostic per recovery. Geometry is not validated
    here: downstream conversion decides what to do with junk boxes.

    Raises NoBoxesFoundError only when the grammar fails and not a
    single bracket group parses.
    """
    strict = _parse_strict(text, bins)
    if strict is not None:
        return ParseResult(entries=strict, mode="strict")

    matches = list(_BOX_RE.finditer(text))
    if not matches:
        raise NoBoxesFoundError(f"no bracket group in {text!r}")

    spans = [(m.start(), m.end()) for m in matches]
    entries: list[tuple[str, list[Box]]] = []
    diagnostics = []
    for m in matches:
        label = _nearest_label(text, m.start(), spans) or _FALLBACK_LABEL
        box = Box(*(int(g) for g in m.groups()), space=NormalizedGrid(bins))
        diagnostics.append(
            f"recovered {m.group(0)} for label {label!r}"
        )
        if entries and entries[-1][0] == label:
            entries[-1][1].append(box)
        else:
            entries.append((label, [box]))
    return ParseResult(entries=entries, diagnostics=diagnostics, mode="recovery")
