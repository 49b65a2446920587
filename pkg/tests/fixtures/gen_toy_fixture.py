#!/usr/bin/env python3
"""Regenerate the checked-in toy corpus (20 images across 5 sources).

Deterministic by construction; run from this directory:

    python3 gen_toy_fixture.py
"""

from __future__ import annotations

import json
from pathlib import Path

HERE = Path(__file__).parent / "toy"

CATEGORIES = [
    {"id": 1, "name": "dog"},
    {"id": 2, "name": "cat"},
    {"id": 3, "name": "person"},
]


def coco() -> dict:
    images = [
        {"id": i, "width": 640, "height": 480, "file_name": f"coco_{i:03d}.jpg"}
        for i in range(8)
    ]
    anns = []

    def ann(img, cat, bbox):
        anns.append(
            {
                "id": len(anns) + 1,
                "image_id": img,
                "category_id": cat,
                "bbox": bbox,
            }
        )

    # images 6 and 7 stay empty on purpose (grounding negatives)
    ann(0, 1, [10, 20, 100, 80])
    ann(0, 1, [12, 22, 100, 80])   # near-duplicate of the first dog box
    ann(0, 2, [300, 100, 120, 90])
    ann(1, 1, [50, 50, 200, 150])
    ann(1, 3, [400, 80, 100, 300])
    ann(2, 2, [20, 30, 80, 60])
    ann(2, 2, [200, 220, 90, 70])
    ann(3, 3, [100, 100, 150, 250])
    ann(4, 1, [5, 5, 60, 40])
    ann(4, 2, [330, 240, 110, 100])
    ann(4, 3, [480, 60, 80, 240])
    ann(5, 1, [250, 250, 140, 120])
    ann(5, 1, [250, 250, 140, 120])  # exact duplicate
    return {"images": images, "annotations": anns, "categories": CATEGORIES}


def referring() -> dict:
    def img(i):
        return {"image_id": i, "width": 512, "height": 384, "uri": f"ref_{i:03d}.jpg"}

    records = [
        {
            "image": img(0),
            "expressions": ["left sandwich"],
            "bboxes": [[40, 120, 200, 260]],
        },
        {
            "image": img(0),
            "expressions": ["sandwich on the right side of the plate"],
            "bboxes": [[260, 120, 430, 270]],
        },
        {
            "image": img(1),
            "expressions": ["a red car with open doors"],
            "bboxes": [[60, 90, 400, 300]],
        },
        {
            "image": img(1),
            "expressions": ["the cat"],
            "bboxes": [],
        },
        {
            "image": img(2),
            "expressions": ["a man wearing a bright yellow raincoat standing next to the old fence"],
            "bboxes": [[150, 40, 320, 360]],
        },
        {
            "image": img(2),
            "expressions": ["a blue bicycle", "the blue bike"],
            "bboxes": [[10, 200, 140, 350]],
        },
        {
            "image": img(3),
            "expressions": ["upper window"],
            "bboxes": [[310, 20, 470, 140]],
        },
        {
            "image": img(4),
            "expressions": ["a woman holding a striped umbrella in the rain"],
            "bboxes": [[90, 60, 280, 370]],
        },
    ]
    return {"records": records}


def regions() -> dict:
    def img(i):
        return {"image_id": i, "width": 800, "height": 600, "uri": f"vg_{i:03d}.jpg"}

    records = [
        {
            "image": img(0),
            "regions": [
                {"phrase": "a wooden table", "bbox": [100, 300, 700, 580]},
                {"phrase": "a green mug", "bbox": [350, 330, 450, 420]},
                # overflows the right edge by 1.5 px; lenient ingest clamps it
                {"phrase": "window with white frame", "bbox": [600, 40, 801.5, 220]},
            ],
        },
        {
            "image": img(1),
            "regions": [
                {"phrase": "a man riding a bike", "bbox": [200, 120, 520, 500]},
                {"phrase": "front wheel", "bbox": [220, 380, 360, 500]},
            ],
        },
        {
            "image": img(2),
            "regions": [
                {"phrase": "a dog sleeping on a soft red blanket near the warm fireplace", "bbox": [150, 250, 600, 520]},
                {"phrase": "brick fireplace", "bbox": [500, 60, 780, 420]},
            ],
        },
        {
            "image": img(3),
            "regions": [
                {"phrase": "tall glass building", "bbox": [60, 20, 420, 560]},
                {"phrase": "yellow taxi", "bbox": [430, 400, 760, 560]},
            ],
        },
    ]
    return {"records": records}


def captions() -> list[dict]:
    return [
        {
            "image_id": i,
            "width": 1024,
            "height": 768,
            "uri": f"cap_{i:03d}.jpg",
            "caption": text,
        }
        for i, text in enumerate(
            [
                "A busy street market at dusk with vendors selling fruit under string lights.",
                "Two children playing chess on a park bench while pigeons gather nearby.",
                "A lighthouse on a rocky cliff overlooking a calm turquoise sea.",
            ]
        )
    ]


def dialogues() -> list[dict]:
    return [
        {
            "turns": [
                {"role": "user", "text": "What is the sum of 17 and 25?"},
                {"role": "assistant", "text": "17 + 25 = 42."},
            ]
        },
        {
            "turns": [
                {"role": "user", "text": "Write a haiku about rivers."},
                {"role": "assistant", "text": "Silver water runs / carving valleys out of stone / patient as the years."},
                {"role": "user", "text": "Now one about mountains."},
                {"role": "assistant", "text": "Granite shoulders rise / holding snow against the sun / clouds rest on their backs."},
            ]
        },
        {
            "turns": [
                {"role": "user", "text": "Explain what a prime number is in one sentence."},
                {"role": "assistant", "text": "A prime number is an integer greater than 1 divisible only by 1 and itself."},
            ]
        },
    ]


def mix() -> dict:
    return {
        "split": "instruction",
        "seed": 47,
        "entries": [
            {"kind": "language_only", "quota": 2},
            {"kind": "caption", "quota": 3},
            {"kind": "detection", "quota": 8},
            {"kind": "rec", "quota": 5},
            {"kind": "grounding", "quota": 10},
            {"kind": "reg", "quota": 4},
        ],
    }


def pipeline_config() -> dict:
    return {
        "seed": 20240501,
        "split": "instruction",
        "mix": "toy.mix",
        "budget": 4096,
        "figures": True,
        "plan_scale": "13B",
        "sources": [
            {"name": "cocotoy", "format": "coco_detection_json", "path": "coco.json"},
            {
                "name": "reftoy",
                "format": "referring_json",
                "path": "referring.json",
                "emit": ["rec", "reg", "grounding"],
            },
            {
                "name": "vgtoy",
                "format": "region_description_json",
                "path": "regions.json",
                "lenient": True,
            },
            {"name": "captoy", "format": "caption_jsonl", "path": "captions.jsonl"},
            {"name": "texttoy", "format": "plain_text_jsonl", "path": "dialogues.jsonl"},
        ],
    }


def main() -> None:
    HERE.mkdir(parents=True, exist_ok=True)
    (HERE / "coco.json").write_text(json.dumps(coco(), indent=1) + "\n")
    (HERE / "referring.json").write_text(json.dumps(referring(), indent=1) + "\n")
    (HERE / "regions.json").write_text(json.dumps(regions(), indent=1) + "\n")
    (HERE / "captions.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in captions())
    )
    (HERE / "dialogues.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in dialogues())
    )
    (HERE / "toy.mix").write_text(json.dumps(mix(), indent=1) + "\n")
    (HERE / "pipeline.json").write_text(json.dumps(pipeline_config(), indent=1) + "\n")
    print(f"wrote fixture under {HERE}")


if __name__ == "__main__":
    main()
