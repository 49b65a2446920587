"""Delimited tables and matplotlib figures for eval/stats reports.

Figures are rendered to files next to the CSV output; they are
presentation artifacts and intentionally excluded from determinism
hashes (PNG encoding is not byte-stable across library versions).
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evalkit import EvalReport  # noqa: E402


def write_csv(path: Path, rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def stats_csv(stats: Mapping[str, Any], path: Path) -> None:
    write_csv(path, stats["rows"], ("type", "kind", "samples"))


def eval_csv(report: EvalReport, path: Path) -> None:
    rows = [
        {"category": cat, "ap": "" if ap is None else f"{ap:.6f}"}
        for cat, ap in sorted(report.per_category.items())
    ]
    write_csv(path, rows, ("category", "ap"))


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def render_stats_figures(stats: Mapping[str, Any], outdir: Path) -> list[Path]:
    outdir = Path(outdir)
    written = []

    rows = [r for r in stats["rows"] if r["samples"] > 0] or stats["rows"]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.barh([r["type"] for r in rows][::-1], [r["samples"] for r in rows][::-1])
    ax.set_xlabel("samples")
    ax.set_title("Samples per task type")
    written.append(_save(fig, outdir / "samples_per_type.png"))

    hist = stats["boxes_per_sample"]["histogram"]
    if hist:
        fig, ax = plt.subplots(figsize=(6, 4))
        keys = sorted(hist, key=int)
        ax.bar(keys, [hist[k] for k in keys])
        ax.set_xlabel("boxes per sample")
        ax.set_ylabel("samples")
        ax.set_title(
            "Boxes per sample (mean %.2f)" % stats["boxes_per_sample"]["mean"]
        )
        written.append(_save(fig, outdir / "boxes_per_sample.png"))

    if stats["detail_levels"]:
        fig, ax = plt.subplots(figsize=(5, 4))
        items = sorted(stats["detail_levels"].items())
        ax.bar([k for k, _ in items], [v for _, v in items])
        ax.set_ylabel("region descriptions")
        ax.set_title("Detail-level distribution")
        written.append(_save(fig, outdir / "detail_levels.png"))
    return written


def render_eval_figures(report: EvalReport, outdir: Path) -> list[Path]:
    outdir = Path(outdir)
    written = []

    if report.pr_curves:
        fig, ax = plt.subplots(figsize=(6, 5))
        recall_points = None
        for cat, grid in sorted(report.pr_curves.items()):
            recall_points = [i / (len(grid) - 1) for i in range(len(grid))]
            ax.plot(recall_points, grid, label=cat)
        ax.set_xlabel("recall")
        ax.set_ylabel("interpolated precision")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title("PR curves at the loosest IoU threshold")
        if len(report.pr_curves) <= 12:
            ax.legend(fontsize=8)
        written.append(_save(fig, outdir / "pr_curves.png"))

    defined = {c: ap for c, ap in report.per_category.items() if ap is not None}
    if defined:
        fig, ax = plt.subplots(figsize=(8, 4))
        cats = sorted(defined)
        ax.bar(cats, [defined[c] for c in cats])
        ax.set_ylabel("AP")
        ax.set_ylim(0, 1.0)
        ax.set_title("AP per category")
        plt.setp(ax.get_xticklabels(), rotation=45, ha="right", fontsize=8)
        written.append(_save(fig, outdir / "ap_per_category.png"))
    return written
