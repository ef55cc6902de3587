"""On-disk dataset layout: ``images/<id>.png`` (0/255 masks),
``annotations/<id>.json`` and a ``manifest.json`` with Table-1-style counts."""
from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .domain import Annotation, GestureVocabulary, Handedness, Sample

MANIFEST = "manifest.json"
SCHEMA_VERSION = 1


def write_mask_png(path, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray((np.asarray(image) * 255).astype(np.uint8), mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.array(img.convert("L"))
    return (arr > 127).astype(np.uint8)


def write_annotation(path, annotation: Annotation) -> None:
    Path(path).write_text(json.dumps(annotation.to_json(), indent=2) + "\n")


def read_annotation(path) -> Annotation:
    return Annotation.from_json(json.loads(Path(path).read_text()))


def write_sample(root, sid: str, s: Sample) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    write_mask_png(root / "images" / f"{sid}.png", s.image)
    write_annotation(root / "annotations" / f"{sid}.json", s.annotation)


def table_counts(entries: Iterable[dict]) -> dict:
    """Per-split sample counts by gesture (G1..G10) and by hand."""
    out = {}
    entries = list(entries)
    for split in ("train", "test"):
        rows = [e for e in entries if e["split"] == split]
        g = Counter(e["gesture"] for e in rows)
        h = Counter(e["handedness"] for e in rows)
        out[split] = {**{f"G{i}": g.get(i, 0) for i in range(1, 11)},
                      "left": h.get("left", 0), "right": h.get("right", 0), "total": len(rows)}
    return out


def write_manifest(root, entries: List[dict], spec: dict, vocab: GestureVocabulary) -> dict:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "spec": spec,
        "vocabulary": vocab.to_dict(),
        "counts": table_counts(entries),
        "splits": {
            split: sorted({e["user"] for e in entries if e["split"] == split})
            for split in ("train", "test")
        },
        "samples": entries,
    }
    Path(root, MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema {manifest.get('schema_version')}")
    return manifest


def load_dataset(root, split: Optional[str] = None) -> Tuple[List[Sample], GestureVocabulary]:
    """Read every sample of ``split`` (or all) listed in the manifest."""
    root = Path(root)
    manifest = read_manifest(root)
    vocab = GestureVocabulary.from_dict(manifest["vocabulary"])
    samples = []
    for e in manifest["samples"]:
        if split is not None and e["split"] != split:
            continue
        ann = read_annotation(root / "annotations" / f"{e['id']}.json")
        image = read_mask_png(root / "images" / f"{e['id']}.png")
        meta = {"id": e["id"], "user": e["user"], "split": e["split"], **e.get("meta", {})}
        samples.append(Sample(image, ann.gesture, Handedness(ann.handedness), ann.keypoints, meta))
    return samples, vocab
