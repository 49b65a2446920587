"""Corpus statistics shaped like the per-task sample-count tables."""

from __future__ import annotations

from collections import Counter
from typing import Any, Iterable

from .model import TaskKind, TaskSample

# canonical report row names per task kind; every row appears in the
# report even at zero so downstream tables keep a fixed shape
ROW_NAMES = {
    TaskKind.LANGUAGE_ONLY: "Language Instruction",
    TaskKind.VL_INSTRUCTION: "VL Instruction",
    TaskKind.CAPTION: "Image Caption",
    TaskKind.GENERAL_VQA: "General VQAs",
    TaskKind.SCENE_TEXT_VQA: "Scene Text-centric VQAs",
    TaskKind.DOC_VQA: "Document-related VQAs",
    TaskKind.DETECTION: "Object Detection",
    TaskKind.REC: "REC",
    TaskKind.GROUNDING: "Visual Grounding",
    TaskKind.REG: "REG",
    TaskKind.COUNTING: "Object Counting",
}


def _box_count(sample: TaskSample) -> int | None:
    if sample.kind in (TaskKind.DETECTION, TaskKind.GROUNDING):
        return sum(len(e["bboxes"]) for e in sample.payload["entries"])
    if sample.kind is TaskKind.COUNTING:
        return len(sample.payload["bboxes"])
    if sample.kind in (TaskKind.REC, TaskKind.REG):
        return 1
    return None


def corpus_stats(samples: Iterable[TaskSample]) -> dict[str, Any]:
    kind_counts: Counter[TaskKind] = Counter()
    box_hist: Counter[int] = Counter()
    labels: set[str] = set()
    detail_levels: Counter[str] = Counter()
    box_total = 0
    box_samples = 0

    for s in samples:
        kind_counts[s.kind] += 1
        n = _box_count(s)
        if n is not None:
            box_hist[n] += 1
            box_total += n
            box_samples += 1
        if s.kind in (TaskKind.DETECTION, TaskKind.GROUNDING):
            labels.update(e["label"] for e in s.payload["entries"])
        if s.kind is TaskKind.REG:
            detail_levels[s.payload.get("detail_level", "unclassified")] += 1

    rows = [
        {
            "type": ROW_NAMES[kind],
            "kind": kind.value,
            "samples": kind_counts.get(kind, 0),
        }
        for kind in ROW_NAMES
    ]
    return {
        "rows": rows,
        "total": sum(kind_counts.values()),
        "boxes_per_sample": {
            "histogram": {str(k): box_hist[k] for k in sorted(box_hist)},
            "mean": (box_total / box_samples) if box_samples else 0.0,
        },
        "label_vocabulary": len(labels),
        "detail_levels": dict(sorted(detail_levels.items())),
    }
