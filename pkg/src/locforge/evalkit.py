"""Scoring of parsed localization output against ground truth.

Detection follows the standard COCO protocol: greedy score-ordered
matching per image, precision/recall accumulated globally per category,
average precision as the mean of interpolated precision at 101 recall
points, averaged over IoU thresholds 0.50:0.05:0.95. Single-target
queries score top-1 accuracy at IoU strictly above 0.5; counting scores
mean absolute error on box counts. All protocol constants are
config-overridable through EvalParams.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import MissingQueryError
from .model import Box

REC_IOU_THRESHOLD = 0.5


def iou(a: Box, b: Box) -> float:
    """Intersection over union with the continuous area convention."""
    if type(a.space) is not type(b.space):
        raise ValueError("boxes in different coordinate spaces")
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    if ix2 <= ix1 or iy2 <= iy1:
        return 0.0
    inter = (ix2 - ix1) * (iy2 - iy1)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class Prediction:
    image_id: str
    label: str
    box: Box
    score: float = 1.0
    rank: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    label: str
    box: Box


@dataclass(frozen=True)
class EvalParams:
    iou_thresholds: tuple[float, ...] = tuple(
        round(0.5 + 0.05 * i, 2) for i in range(10)
    )
    recall_points: tuple[float, ...] = tuple(round(0.01 * i, 2) for i in range(101))
    small_max_area: float = 32.0**2
    medium_max_area: float = 96.0**2
    max_dets: int = 100


_BANDS = ("all", "small", "medium", "large")


@dataclass
class EvalReport:
    """Aggregated metrics; sections are filled per task."""

    map: Optional[float] = None
    ap50: Optional[float] = None
    ap75: Optional[float] = None
    ap_small: Optional[float] = None
    ap_medium: Optional[float] = None
    ap_large: Optional[float] = None
    per_category: dict[str, Optional[float]] = field(default_factory=dict)
    pr_curves: dict[str, list[float]] = field(default_factory=dict)
    rec_accuracy: dict[str, float] = field(default_factory=dict)
    counting_mae: Optional[float] = None
    matched: int = 0
    unmatched: int = 0
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, object]:
        return {
            "mAP": self.map,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "APS": self.ap_small,
            "APM": self.ap_medium,
            "APL": self.ap_large,
            "per_category": self.per_category,
            "rec_accuracy": self.rec_accuracy,
            "counting_mae": self.counting_mae,
            "matched": self.matched,
            "unmatched": self.unmatched,
            "warnings": self.warnings,
        }


def _band_range(band: str, params: EvalParams) -> tuple[float, float]:
    if band == "all":
        return (0.0, math.inf)
    if band == "small":
        return (0.0, params.small_max_area)
    if band == "medium":
        return (params.small_max_area, params.medium_max_area)
    return (params.medium_max_area, math.inf)


def _match_image(
    dts: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    threshold: float,
) -> list[tuple[float, int, bool]]:
    """Greedy matching of one image's predictions for one category.

    Predictions are visited most-confident first; each takes the
    unmatched ground truth with the highest IoU when that IoU reaches
    the threshold. Returns (score, rank, is_tp) per prediction.
    """
    taken = [False] * len(gts)
    results = []
    for dt in dts:
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(dt.box, gt.box)
            if v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0 and best_iou >= threshold:
            taken[best_j] = True
            results.append((dt.score, dt.rank, True))
        else:
            results.append((dt.score, dt.rank, False))
    return results


def _average_precision(
    flags: list[tuple[float, int, bool]],
    npos: int,
    recall_points: Sequence[float],
) -> tuple[float, np.ndarray, int]:
    """AP over interpolated precision at fixed recall points.

    Returns (ap, interpolated precision per recall point, tp count).
    """
    grid = np.zeros(len(recall_points))
    if npos == 0:
        return 0.0, grid, 0
    if not flags:
        return 0.0, grid, 0
    flags = sorted(flags, key=lambda f: (-f[0], f[1]))
    tp = np.cumsum([1.0 if f[2] else 0.0 for f in flags])
    fp = np.cumsum([0.0 if f[2] else 1.0 for f in flags])
    recall = tp / npos
    precision = tp / np.maximum(tp + fp, 1e-300)
    # precision envelope: best precision achievable at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, np.asarray(recall_points), side="left")
    inside = idx < len(recall)
    grid[inside] = envelope[idx[inside]]
    return float(grid.mean()), grid, int(tp[-1]) if len(tp) else 0


def coco_map(
    preds: Iterable[Prediction],
    gts: Iterable[GroundTruth],
    params: EvalParams = EvalParams(),
) -> EvalReport:
    """Full detection report: mAP, AP50/75, area-banded AP, per-category AP.

    Categories without any ground truth are skipped with a warning and
    excluded from every average. Untied scores make the result invariant
    to prediction input order; ties break by input rank.
    """
    preds = list(preds)
    gts = list(gts)
    by_cat_img_dt: dict[str, dict[str, list[Prediction]]] = defaultdict(lambda: defaultdict(list))
    by_cat_img_gt: dict[str, dict[str, list[GroundTruth]]] = defaultdict(lambda: defaultdict(list))
    for p in preds:
        by_cat_img_dt[p.label][p.image_id].append(p)
    for g in gts:
        by_cat_img_gt[g.label][g.image_id].append(g)

    report = EvalReport()
    categories = sorted(set(by_cat_img_dt) | set(by_cat_img_gt))
    gt_categories = []
    for cat in categories:
        if cat not in by_cat_img_gt:
            report.warnings.append(f"category {cat!r}: no ground truth, skipped")
        else:
            gt_categories.append(cat)
    if not gt_categories:
        return report

    # per (category, band, threshold) AP
    ap: dict[tuple[str, str, float], float] = {}
    band_defined: dict[tuple[str, str], bool] = {}
    for cat in gt_categories:
        img_dts = {
            img: sorted(dts, key=lambda d: (-d.score, d.rank))[: params.max_dets]
            for img, dts in by_cat_img_dt.get(cat, {}).items()
        }
        for band in _BANDS:
            lo, hi = _band_range(band, params)
            img_gts = {
                img: [g for g in glist if lo <= g.box.area < hi]
                for img, glist in by_cat_img_gt[cat].items()
            }
            npos = sum(len(v) for v in img_gts.values())
            band_defined[(cat, band)] = npos > 0
            if npos == 0:
                continue
            for t in params.iou_thresholds:
                flags: list[tuple[float, int, bool]] = []
                for img in set(img_dts) | set(img_gts):
                    flags.extend(
                        _match_image(
                            img_dts.get(img, ()), img_gts.get(img, ()), t
                        )
                    )
                value, grid, tp_count = _average_precision(
                    flags, npos, params.recall_points
                )
                ap[(cat, band, t)] = value
                if band == "all" and t == params.iou_thresholds[0]:
                    report.pr_curves[cat] = [float(x) for x in grid]
                    report.matched += tp_count
                    report.unmatched += npos - tp_count

    def _mean_over(band: str, thresholds: Sequence[float]) -> Optional[float]:
        cats = [c for c in gt_categories if band_defined[(c, band)]]
        if not cats:
            return None
        per_threshold = [
            sum(ap[(c, band, t)] for c in cats) / len(cats) for t in thresholds
        ]
        return float(sum(per_threshold) / len(per_threshold))

    report.map = _mean_over("all", params.iou_thresholds)
    report.ap50 = _mean_over("all", [params.iou_thresholds[0]])
    t75 = 0.75 if 0.75 in params.iou_thresholds else None
    report.ap75 = _mean_over("all", [t75]) if t75 is not None else None
    report.ap_small = _mean_over("small", params.iou_thresholds)
    report.ap_medium = _mean_over("medium", params.iou_thresholds)
    report.ap_large = _mean_over("large", params.iou_thresholds)
    for cat in gt_categories:
        if band_defined[(cat, "all")]:
            vals = [ap[(cat, "all", t)] for t in params.iou_thresholds]
            report.per_category[cat] = float(sum(vals) / len(vals))
        else:
            report.per_category[cat] = None
    return report


def rec_accuracy(
    preds: Mapping[str, Sequence[Box]],
    gts: Mapping[str, Box],
    strict: bool = True,
) -> float:
    """Top-1 accuracy of single-target queries.

    A query counts correct when the first predicted box's IoU with the
    ground truth exceeds 0.5 (strictly; ``strict=False`` switches to >=
    for comparison runs). Queries whose answer parsed to no boxes count
    incorrect. A ground truth with no prediction record at all is an
    input error, not a miss.
    """
    if not gts:
        return 0.0
    correct = 0
    for qid, gt_box in gts.items():
        if qid not in preds:
            raise MissingQueryError(f"no prediction record for query {qid!r}")
        boxes = preds[qid]
        if not boxes:
            continue
        v = iou(boxes[0], gt_box)
        if v > REC_IOU_THRESHOLD or (not strict and v == REC_IOU_THRESHOLD):
            correct += 1
    return correct / len(gts)


def counting_mae(
    pred_counts: Mapping[str, int],
    gt_counts: Mapping[str, int],
) -> float:
    """Mean absolute count error; a missing prediction counts as zero boxes."""
    if not gt_counts:
        return 0.0
    total = sum(
        abs(pred_counts.get(qid, 0) - gt) for qid, gt in gt_counts.items()
    )
    return total / len(gt_counts)
