"""Dataset persistence: PNG images, JSONL manifest, checksums.

Layout under a dataset root:
    images/<id>.png     8-bit lossless RGB
    manifest.jsonl      one record per item: {id, path, shape_label,
                        texture_label, provenance}
    dataset.json        class lists, set-level metadata, manifest hash
    checksums.txt       "sha256  relpath" per file, verified on read
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .types import DatasetError, Stimulus, StimulusSet


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(stimulus_set: StimulusSet, directory: str | Path) -> Path:
    """Write a set to disk; returns the manifest path."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for item in stimulus_set.items:
        rel = f"images/{item.id}.png"
        arr = np.round(np.clip(item.image, 0, 1) * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(root / rel, format="PNG")
        records.append(
            {
                "id": item.id,
                "path": rel,
                "shape_label": int(item.shape_label),
                "texture_label": int(item.texture_label),
                "provenance": item.provenance,
            }
        )
    manifest_path = root / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    dataset_meta = {
        "shape_classes": list(stimulus_set.shape_classes),
        "texture_classes": list(stimulus_set.texture_classes),
        "metadata": stimulus_set.metadata,
        "manifest_sha256": _sha256(manifest_path),
    }
    with open(root / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump(dataset_meta, fh, sort_keys=True, indent=1)
    checks = []
    for rec in records:
        checks.append(f"{_sha256(root / rec['path'])}  {rec['path']}")
    checks.append(f"{_sha256(manifest_path)}  manifest.jsonl")
    checks.append(f"{_sha256(root / 'dataset.json')}  dataset.json")
    (root / "checksums.txt").write_text("\n".join(checks) + "\n", encoding="utf-8")
    return manifest_path


def read_dataset(manifest_path: str | Path, verify: bool = True) -> StimulusSet:
    """Load a set from its manifest (or its directory); verifies checksums."""
    path = Path(manifest_path)
    root = path if path.is_dir() else path.parent
    manifest = root / "manifest.jsonl"
    dataset_json = root / "dataset.json"
    for required in (manifest, dataset_json):
        if not required.exists():
            raise DatasetError(f"missing {required}")
    if verify:
        checksums = root / "checksums.txt"
        if not checksums.exists():
            raise DatasetError(f"missing {checksums}")
        for line in checksums.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            digest, rel = line.split(None, 1)
            target = root / rel.strip()
            if not target.exists():
                raise DatasetError(f"missing file listed in checksums: {rel}")
            actual = _sha256(target)
            if actual != digest:
                raise DatasetError(f"checksum mismatch for {rel}: {actual} != {digest}")
    meta = json.loads(dataset_json.read_text(encoding="utf-8"))
    items = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        img_path = root / rec["path"]
        if not img_path.exists():
            raise DatasetError(f"missing image file {rec['path']}")
        arr = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
        items.append(
            Stimulus(
                id=rec["id"],
                image=arr,
                shape_label=int(rec["shape_label"]),
                texture_label=int(rec["texture_label"]),
                provenance=rec.get("provenance", {}),
            )
        )
    return StimulusSet(
        items=tuple(items),
        shape_classes=tuple(meta["shape_classes"]),
        texture_classes=tuple(meta["texture_classes"]),
        metadata=meta.get("metadata", {}),
    ).validate()
