"""JSONL reading/writing, atomic output, seeds, and content hashing.

Writers stage output to a temp file in the same directory and rename it
into place, so an interrupted run never leaves a truncated JSONL behind.
Serialization is canonical (sorted keys) to keep re-runs byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .errors import MalformedRecordError


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_jsonl(path: Path, rows: Iterable[Mapping[str, Any]]) -> int:
    """Atomically write rows as one JSON object per line; returns row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(dumps_canonical(row))
                fh.write("\n")
                count += 1
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return count


def read_jsonl(path: Path) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(f"{path}:{lineno}: {exc}") from exc


def write_json(path: Path, obj: Any) -> None:
    """Atomic pretty-printed JSON document (ledgers, manifests, reports)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True, ensure_ascii=False, indent=2)
            fh.write("\n")
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def read_json(path: Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def payload_hash(image_id: str | None, payload: Mapping[str, Any]) -> str:
    """Dedup key over (image, canonical payload); template-independent."""
    blob = dumps_canonical([image_id, payload]).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_hash(root: Path, patterns: Iterable[str] = ("*.jsonl", "*.json")) -> str:
    """Combined hash of deterministic artifacts under ``root``.

    Covers relative paths plus file bytes so renames count as changes.
    Figures (PNG) are excluded: image encoding is not byte-stable across
    matplotlib versions.
    """
    root = Path(root)
    files: list[Path] = []
    for pattern in patterns:
        files.extend(root.rglob(pattern))
    h = hashlib.sha256()
    for f in sorted(files, key=lambda p: p.relative_to(root).as_posix()):
        h.update(f.relative_to(root).as_posix().encode("utf-8"))
        h.update(b"\0")
        h.update(bytes.fromhex(file_sha256(f)))
    return h.hexdigest()


def load_annotated_images(directory: Path) -> list:
    """Rebuild AnnotatedImages from an images.jsonl / regions.jsonl pair.

    regions.jsonl is optional (caption sources have none); rows with a
    null bbox are the negative-expression markers.
    """
    from .model import AnnotatedImage, image_from_row, region_from_row

    directory = Path(directory)
    metas = [image_from_row(row) for row in read_jsonl(directory / "images.jsonl")]
    regions: dict[str, list] = {m.image_id: [] for m in metas}
    negatives: dict[str, list[str]] = {m.image_id: [] for m in metas}
    regions_path = directory / "regions.jsonl"
    if regions_path.is_file():
        for row in read_jsonl(regions_path):
            image_id = row["image_id"]
            if image_id not in regions:
                raise MalformedRecordError(
                    f"{regions_path}: region for unknown image {image_id!r}"
                )
            if row.get("bbox") is None:
                negatives[image_id].append(row["expression"])
            else:
                regions[image_id].append(region_from_row(row))
    return [
        AnnotatedImage(
            image_id=m.image_id,
            width=m.width,
            height=m.height,
            uri=m.uri,
            regions=tuple(regions[m.image_id]),
            negatives=tuple(negatives[m.image_id]),
        )
        for m in metas
    ]


def derive_seed(master: int, *scope: object) -> int:
    """Stable 64-bit sub-seed for a scoped RNG (entry index, image id, ...)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(master).encode("utf-8"))
    for part in scope:
        h.update(b"\0")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "big")
