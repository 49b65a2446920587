"""Quota-driven assembly of training splits from curated sample streams.

Each mix entry (task kind, optional source filter, quota) is sampled
independently with its own seeded reservoir, so raising one entry's
quota never disturbs another entry's selection. A final single-threaded
pass over the merged, ordered stream removes cross-source duplicates
keyed on (image id, canonical payload hash), so template wording changes
cannot defeat the key. Output order is stable: entry order, then sample id.
"""

from __future__ import annotations

import enum
import hashlib
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .errors import ConfigError, UnresolvedSourceError
from .jsonl import derive_seed, dumps_canonical, payload_hash, read_json
from .model import TaskKind, TaskSample, sample_to_row


class Split(enum.Enum):
    PRETRAIN = "pretrain"
    INSTRUCTION = "instruction"


PRETRAIN_KINDS = frozenset(
    {TaskKind.CAPTION, TaskKind.REC, TaskKind.REG, TaskKind.DETECTION}
)


@dataclass(frozen=True)
class MixEntry:
    kind: TaskKind
    source: Optional[str] = None
    count: Optional[int] = None
    fraction: Optional[float] = None

    def __post_init__(self) -> None:
        if (self.count is None) == (self.fraction is None):
            raise ConfigError("mix entry needs exactly one of count / fraction")
        if self.count is not None and self.count < 0:
            raise ConfigError(f"negative quota {self.count}")
        if self.fraction is not None and not 0.0 <= self.fraction <= 1.0:
            raise ConfigError(f"fraction {self.fraction} outside [0, 1]")

    def resolve_quota(self, stream_size: int) -> int:
        if self.count is not None:
            return self.count
        return round(self.fraction * stream_size)


@dataclass(frozen=True)
class MixSpec:
    entries: tuple[MixEntry, ...]
    seed: int
    split: Split

    def __post_init__(self) -> None:
        if self.split is Split.PRETRAIN:
            for e in self.entries:
                if e.kind not in PRETRAIN_KINDS:
                    raise ConfigError(
                        f"kind {e.kind.value!r} not allowed in the pretrain split"
                    )

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "MixSpec":
        entries = []
        for e in doc["entries"]:
            quota = e.get("quota")
            fraction = e.get("fraction")
            entries.append(
                MixEntry(
                    kind=TaskKind(e["kind"]),
                    source=e.get("source"),
                    count=quota,
                    fraction=fraction,
                )
            )
        return cls(
            entries=tuple(entries),
            seed=int(doc["seed"]),
            split=Split(doc["split"]),
        )


def load_mixspecs(path: Path) -> list[MixSpec]:
    """A mix file holds either one spec or {"specs": [spec, ...]}."""
    doc = read_json(Path(path))
    if isinstance(doc, dict) and "specs" in doc:
        return [MixSpec.from_dict(d) for d in doc["specs"]]
    return [MixSpec.from_dict(doc)]


@dataclass
class SplitManifest:
    split: str
    seed: int
    entries: list[dict[str, Any]] = field(default_factory=list)
    total: int = 0
    deduped: int = 0
    content_hash: str = ""

    def as_dict(self) -> dict[str, Any]:
        return {
            "split": self.split,
            "seed": self.seed,
            "entries": self.entries,
            "total": self.total,
            "deduped": self.deduped,
            "content_hash": self.content_hash,
        }


def _matches(entry: MixEntry, sample: TaskSample) -> bool:
    if sample.kind is not entry.kind:
        return False
    if entry.source is not None:
        return sample.sample_id.startswith(f"{entry.source}/")
    return True


def reservoir_sample(stream: Sequence[TaskSample], k: int, rng: random.Random) -> list[TaskSample]:
    sample: list[TaskSample] = []
    for i, item in enumerate(stream):
        if i < k:
            sample.append(item)
        else:
            j = rng.randint(0, i)
            if j < k:
                sample[j] = item
    return sample


def consolidate(
    mix: MixSpec, samples: Iterable[TaskSample]
) -> tuple[list[TaskSample], SplitManifest]:
    """Draw every mix entry's quota and dedup the merged result.

    A shortfall (stream smaller than quota) is recorded in the manifest,
    not an error; an entry whose filter matches nothing while asking for
    a nonzero quota is a configuration error.
    """
    samples = list(samples)
    manifest = SplitManifest(split=mix.split.value, seed=mix.seed)

    picked_per_entry: list[list[TaskSample]] = []
    for i, entry in enumerate(mix.entries):
        stream = [s for s in samples if _matches(entry, s)]
        quota = entry.resolve_quota(len(stream))
        if not stream and quota > 0:
            raise UnresolvedSourceError(
                f"entry {i} ({entry.kind.value}, source={entry.source!r}) "
                f"matched no input samples"
            )
        rng = random.Random(derive_seed(mix.seed, "entry", i))
        picked = reservoir_sample(stream, quota, rng)
        picked.sort(key=lambda s: s.sample_id)
        picked_per_entry.append(picked)
        manifest.entries.append(
            {
                "kind": entry.kind.value,
                "source": entry.source,
                "quota": quota,
                "available": len(stream),
                "achieved": 0,  # filled after dedup
                "shortfall": max(0, quota - len(stream)),
            }
        )

    seen_keys: set[str] = set()
    seen_ids: set[str] = set()
    out: list[TaskSample] = []
    hasher = hashlib.sha256()
    for i, picked in enumerate(picked_per_entry):
        achieved = 0
        for s in picked:
            key = payload_hash(s.image_ref, s.payload)
            if key in seen_keys or s.sample_id in seen_ids:
                manifest.deduped += 1
                continue
            seen_keys.add(key)
            seen_ids.add(s.sample_id)
            out.append(s)
            achieved += 1
            hasher.update(dumps_canonical(sample_to_row(s)).encode("utf-8"))
            hasher.update(b"\n")
        manifest.entries[i]["achieved"] = achieved
    manifest.total = len(out)
    manifest.content_hash = hasher.hexdigest()
    return out, manifest


# ---------------------------------------------------------------------------
# manifest verification
# ---------------------------------------------------------------------------

STATUS_PASS = "pass"
STATUS_FAIL = "fail"
STATUS_NOT_DESK_VERIFIABLE = "not_desk_verifiable"


def verify_manifest(
    manifest: Mapping[str, Any], reference: Mapping[str, Any]
) -> dict[str, Any]:
    """Compare achieved counts against a reference table.

    Reference rows: {"kind", "source"?, "expected", "tolerance"? (default
    exact), "desk_verifiable"? (default true)}. Full-scale targets that
    cannot be checked on a desk run are flagged, recorded, and excluded
    from the pass/fail verdict.
    """
    rows = []
    all_pass = True
    for ref_row in reference["rows"]:
        kind = ref_row["kind"]
        source = ref_row.get("source")
        achieved = sum(
            e["achieved"]
            for e in manifest["entries"]
            if e["kind"] == kind and (source is None or e.get("source") == source)
        )
        expected = int(ref_row["expected"])
        tolerance = int(ref_row.get("tolerance", 0))
        delta = achieved - expected
        if not ref_row.get("desk_verifiable", True):
            status = STATUS_NOT_DESK_VERIFIABLE
        elif abs(delta) <= tolerance:
            status = STATUS_PASS
        else:
            status = STATUS_FAIL
            all_pass = False
        rows.append(
            {
                "kind": kind,
                "source": source,
                "expected": expected,
                "achieved": achieved,
                "delta": delta,
                "tolerance": tolerance,
                "status": status,
            }
        )
    return {"rows": rows, "passed": all_pass}
