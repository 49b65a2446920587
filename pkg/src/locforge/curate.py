"""Curation: expression classification, per-image merging, grounding reorg.

Two levels of curation operate on ingested annotations:

* task level: all localization annotations of one image are merged into
  a single detection-format sample (grouped by label, near-duplicate
  boxes removed), and grounding samples are rebuilt to query 0-10 labels
  per image including absent ones;
* annotation level: region descriptions are classified as class-level /
  concise / detailed by a deterministic rule cascade, class-level ones
  are dropped from description-generation data, detailed ones are marked
  so rendering can ask for a richer answer.

The classifier is a closed rule cascade over data-driven lexicon files
(articles, positional/ordinal modifiers, finite-verb markers), so the
word lists can be tuned without code changes.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import EmptyExpressionError, NoRegionsError
from .evalkit import iou
from .jsonl import derive_seed
from .model import (
    AnnotatedImage,
    Box,
    DetailLevel,
    MAX_GROUNDING_CATEGORIES,
    TaskKind,
    TaskSample,
    entries_payload,
    normalize_ws,
)

DEFAULT_DEDUP_IOU = 0.9
DETAILED_TOKEN_THRESHOLD = 12
CLASS_LEVEL_MAX_TOKENS = 3

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# lexicon
# ---------------------------------------------------------------------------

def _load_wordlist(path: Path) -> frozenset[str]:
    words = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.append(line)
    return frozenset(words)


@dataclass(frozen=True)
class Lexicon:
    articles: frozenset[str]
    positional: frozenset[str]
    verbs: frozenset[str]

    @classmethod
    def default(cls) -> "Lexicon":
        base = resources.files("locforge").joinpath("data/lexicons")
        with resources.as_file(base) as root:
            return cls.from_dir(Path(root))

    @classmethod
    def from_dir(cls, root: Path) -> "Lexicon":
        return cls(
            articles=_load_wordlist(root / "articles.txt"),
            positional=_load_wordlist(root / "positional.txt"),
            verbs=_load_wordlist(root / "verbs.txt"),
        )


# ---------------------------------------------------------------------------
# expression classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpressionClass:
    level: DetailLevel
    evidence: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.evidence:
            raise ValueError("classification without evidence")


def _strip_leading_articles(tokens: list[str], articles: frozenset[str]) -> list[str]:
    i = 0
    while i < len(tokens) and tokens[i] in articles:
        i += 1
    # an expression made of articles only keeps its tokens so the head
    # fallback below still has something to point at
    return tokens[i:] if i < len(tokens) else tokens


def classify_expression(expr: str, lexicon: Optional[Lexicon] = None) -> ExpressionClass:
    """Deterministic detail-level classification of a region description.

    Cascade: short phrases whose modifiers are all positional/ordinal are
    class-level; long phrases (> 12 tokens after leading-article strip)
    or phrases with a finite-verb marker followed by at least two tokens
    are detailed; everything else is concise.
    """
    lexicon = lexicon or _default_lexicon()
    if not normalize_ws(expr):
        raise EmptyExpressionError("empty expression")
    tokens = tokenize(expr)
    if not tokens:
        raise EmptyExpressionError(f"no tokens in {expr!r}")
    tokens = _strip_leading_articles(tokens, lexicon.articles)

    if len(tokens) <= CLASS_LEVEL_MAX_TOKENS and all(
        t in lexicon.positional for t in tokens[:-1]
    ):
        return ExpressionClass(
            DetailLevel.CLASS_LEVEL, ("short_phrase", "positional_modifiers")
        )

    evidence = []
    if len(tokens) > DETAILED_TOKEN_THRESHOLD:
        evidence.append("token_count")
    for i, tok in enumerate(tokens):
        if tok in lexicon.verbs and len(tokens) - i - 1 >= 2:
            evidence.append(f"finite_verb:{tok}")
            break
    if evidence:
        return ExpressionClass(DetailLevel.DETAILED, tuple(evidence))

    return ExpressionClass(DetailLevel.CONCISE, ("fallthrough",))


_LEXICON_CACHE: Optional[Lexicon] = None


def _default_lexicon() -> Lexicon:
    global _LEXICON_CACHE
    if _LEXICON_CACHE is None:
        _LEXICON_CACHE = Lexicon.default()
    return _LEXICON_CACHE


def head_noun(expr: str, lexicon: Optional[Lexicon] = None) -> str:
    """Last token after removing articles and positional modifiers."""
    lexicon = lexicon or _default_lexicon()
    tokens = tokenize(expr)
    if not tokens:
        raise EmptyExpressionError(f"no tokens in {expr!r}")
    drop = lexicon.articles | lexicon.positional
    kept = [t for t in tokens if t not in drop]
    return kept[-1] if kept else tokens[-1]


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------

LEDGER_FIELDS = (
    "input_regions",
    "merged_samples",
    "dropped_class_level",
    "retained_concise",
    "retained_detailed",
    "deduped_boxes",
    "kept_boxes",
)


@dataclass
class CurationLedger:
    """Per-source outcome counters; merging two ledgers adds counts."""

    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def bump(self, source: str, key: str, n: int = 1) -> None:
        if key not in LEDGER_FIELDS:
            raise KeyError(key)
        per = self.counts.setdefault(source, {})
        per[key] = per.get(key, 0) + n

    def total(self, key: str) -> int:
        return sum(per.get(key, 0) for per in self.counts.values())

    def totals(self) -> dict[str, int]:
        return {key: self.total(key) for key in LEDGER_FIELDS}

    def merge(self, other: "CurationLedger") -> None:
        for source, per in other.counts.items():
            for key, n in per.items():
                self.bump(source, key, n)

    def as_dict(self) -> dict[str, object]:
        return {"per_source": self.counts, "totals": self.totals()}


# ---------------------------------------------------------------------------
# annotation-level curation (description generation data)
# ---------------------------------------------------------------------------

def curate_reg(
    images: Iterable[AnnotatedImage],
    lexicon: Optional[Lexicon] = None,
) -> tuple[list[TaskSample], CurationLedger]:
    """Filter region descriptions into description-generation samples.

    Class-level expressions are dropped (ledgered, not errors); concise
    and detailed ones become samples whose payload records the detail
    level so rendering can pick the plain or "more detailed" instruction.
    Regions already tagged detailed/concise at ingest keep their tag and
    bypass the classifier.
    """
    lexicon = lexicon or _default_lexicon()
    samples: list[TaskSample] = []
    ledger = CurationLedger()
    for img in images:
        for i, region in enumerate(img.regions):
            ledger.bump(region.source, "input_regions")
            level = region.detail_level
            if level is DetailLevel.UNCLASSIFIED:
                level = classify_expression(region.expression, lexicon).level
            if level is DetailLevel.CLASS_LEVEL:
                ledger.bump(region.source, "dropped_class_level")
                continue
            key = (
                "retained_detailed"
                if level is DetailLevel.DETAILED
                else "retained_concise"
            )
            ledger.bump(region.source, key)
            samples.append(
                TaskSample(
                    sample_id=f"{img.image_id}#reg{i}",
                    kind=TaskKind.REG,
                    image_ref=img.image_id,
                    payload={
                        "expression": region.expression,
                        "bbox": list(region.box.coords()),
                        "detail_level": level.value,
                    },
                )
            )
    return samples, ledger


def to_rec_samples(img: AnnotatedImage) -> list[TaskSample]:
    """One single-target localization sample per region annotation."""
    return [
        TaskSample(
            sample_id=f"{img.image_id}#rec{i}",
            kind=TaskKind.REC,
            image_ref=img.image_id,
            payload={
                "expression": region.expression,
                "bbox": list(region.box.coords()),
            },
        )
        for i, region in enumerate(img.regions)
    ]


# ---------------------------------------------------------------------------
# task-level curation (detection merge, grounding reorganization)
# ---------------------------------------------------------------------------

def _merge_groups(
    img: AnnotatedImage,
    lexicon: Lexicon,
    dedup_iou: float,
    ledger: Optional[CurationLedger],
) -> list[tuple[str, list[Box]]]:
    groups: dict[str, list[Box]] = {}
    for region in img.regions:
        label = region.category if region.category else head_noun(region.expression, lexicon)
        if ledger is not None:
            ledger.bump(region.source, "input_regions")
        kept = groups.setdefault(label, [])
        if any(iou(region.box, prior) >= dedup_iou for prior in kept):
            if ledger is not None:
                ledger.bump(region.source, "deduped_boxes")
            continue
        kept.append(region.box)
        if ledger is not None:
            ledger.bump(region.source, "kept_boxes")
    return [
        (label, sorted(groups[label], key=lambda b: b.coords()))
        for label in sorted(groups)
    ]


def merge_to_detection(
    img: AnnotatedImage,
    lexicon: Optional[Lexicon] = None,
    dedup_iou: float = DEFAULT_DEDUP_IOU,
    ledger: Optional[CurationLedger] = None,
) -> TaskSample:
    """Fold all of one image's region annotations into a detection sample.

    Regions group by category when present, otherwise by the expression's
    head noun; within a label, boxes overlapping an earlier kept box at
    IoU >= ``dedup_iou`` are dropped as re-annotations (keep-first).
    Output labels sort lexicographically and boxes by coordinates.
    """
    if not img.regions:
        raise NoRegionsError(f"{img.image_id}: nothing to merge")
    lexicon = lexicon or _default_lexicon()
    entries = _merge_groups(img, lexicon, dedup_iou, ledger)
    if ledger is not None:
        ledger.bump("", "merged_samples")
    return TaskSample(
        sample_id=f"{img.image_id}#det",
        kind=TaskKind.DETECTION,
        image_ref=img.image_id,
        payload=entries_payload(entries),
    )


def reorganize_grounding(
    images: Iterable[AnnotatedImage],
    label_pool: Sequence[str],
    seed: int,
    lexicon: Optional[Lexicon] = None,
    dedup_iou: float = DEFAULT_DEDUP_IOU,
    max_categories: int = MAX_GROUNDING_CATEGORIES,
) -> list[TaskSample]:
    """Rebuild grounding data to query 0..10 labels per image.

    For each image, k is drawn uniformly from 0..min(10, available
    positive labels + absent candidates). When k exceeds the positives,
    the remainder is filled with labels absent from the image (its own
    annotated negatives plus draws from the corpus label pool), teaching
    the model to answer "nothing matches". Deterministic per (seed,
    image_id), so worker order cannot change the output.
    """
    lexicon = lexicon or _default_lexicon()
    pool = sorted(set(label_pool))
    samples = []
    for img in images:
        groups = dict(_merge_groups(img, lexicon, dedup_iou, ledger=None))
        positives = sorted(groups)
        neg_candidates = sorted(
            ({head_noun(n, lexicon) for n in img.negatives} | set(pool))
            - set(positives)
        )
        rng = random.Random(derive_seed(seed, "grounding", img.image_id))
        upper = min(max_categories, len(positives) + len(neg_candidates))
        k = rng.randint(0, upper)
        if k <= len(positives):
            queried = rng.sample(positives, k)
        else:
            queried = positives + rng.sample(neg_candidates, k - len(positives))
        entries = [(label, groups.get(label, [])) for label in sorted(queried)]
        samples.append(
            TaskSample(
                sample_id=f"{img.image_id}#gnd",
                kind=TaskKind.GROUNDING,
                image_ref=img.image_id,
                payload=entries_payload(entries),
            )
        )
    return samples
