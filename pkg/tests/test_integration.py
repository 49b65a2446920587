"""Full-circle check: render detection text, score it as if a model had
emitted it verbatim. Quantization to the 1000-bin grid keeps IoU far
above 0.5, so AP50 must be exactly 1.0."""

from __future__ import annotations

import random

import pytest

from locforge.cli import main
from locforge.convo import TemplatePack, serialize_sample
from locforge.curate import merge_to_detection
from locforge.jsonl import read_json, write_jsonl
from locforge.model import AnnotatedImage, Box, RegionAnnotation


def _corpus(rng: random.Random, n_images: int):
    labels = ["dog", "cat", "person"]
    images = []
    for i in range(n_images):
        regions = []
        for _ in range(rng.randint(1, 4)):
            x1 = rng.uniform(0, 500)
            y1 = rng.uniform(0, 300)
            w = rng.uniform(40, 130)
            h = rng.uniform(40, 130)
            regions.append(
                RegionAnnotation(
                    box=Box(x1, y1, min(x1 + w, 640.0), min(y1 + h, 480.0)),
                    expression=rng.choice(labels),
                    source="synth",
                )
            )
        images.append(
            AnnotatedImage(f"synth/{i}", 640, 480, regions=tuple(regions))
        )
    return images


def test_rendered_detection_text_scores_perfect_ap50(tmp_path):
    rng = random.Random(2024)
    images = _corpus(rng, 12)
    pack = TemplatePack.default()

    gt_rows = []
    pred_rows = []
    image_rows = []
    for img in images:
        sample = merge_to_detection(img)
        rec = serialize_sample(sample, pack, (img.width, img.height), seed=3)
        pred_rows.append({"image_id": img.image_id, "raw_text": rec.turns[1].text})
        image_rows.append(
            {"image_id": img.image_id, "width": img.width, "height": img.height, "uri": ""}
        )
        for entry in sample.payload["entries"]:
            for bbox in entry["bboxes"]:
                gt_rows.append(
                    {"image_id": img.image_id, "label": entry["label"], "bbox": bbox}
                )

    images_dir = tmp_path / "images"
    write_jsonl(images_dir / "images.jsonl", image_rows)
    write_jsonl(tmp_path / "gt.jsonl", gt_rows)
    write_jsonl(tmp_path / "preds.jsonl", pred_rows)

    report_path = tmp_path / "report.json"
    rc = main(
        [
            "eval",
            "--task",
            "detection",
            "--preds",
            str(tmp_path / "preds.jsonl"),
            "--gt",
            str(tmp_path / "gt.jsonl"),
            "--report",
            str(report_path),
            "--images",
            str(images_dir),
        ]
    )
    assert rc == 0
    report = read_json(report_path)
    assert report["AP50"] == pytest.approx(1.0)
    # grid quantization only nibbles at the strictest thresholds
    assert report["mAP"] >= 0.8
    assert report["matched"] == len(gt_rows)
