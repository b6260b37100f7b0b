"""Cue-conflict scoring: superclass pooling, shape/texture match, shape bias.

An item counts as *decided* when the prediction equals its shape label or
its texture label; shape bias is the fraction of decided items resolved by
shape. Undefined bias (no decided items) is reported as absent, never 0.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SuperclassMap:
    """Total map from fine class index to superclass index."""

    fine_to_super: tuple[int, ...]
    superclass_names: tuple[str, ...]

    def __post_init__(self):
        n_super = len(self.superclass_names)
        for fine, sup in enumerate(self.fine_to_super):
            if not 0 <= sup < n_super:
                raise ValueError(f"fine class {fine} maps to invalid superclass {sup}")

    @classmethod
    def identity(cls, names) -> "SuperclassMap":
        names = tuple(names)
        return cls(fine_to_super=tuple(range(len(names))), superclass_names=names)

    @classmethod
    def from_json(cls, path) -> "SuperclassMap":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            fine_to_super=tuple(data["fine_to_super"]),
            superclass_names=tuple(data["superclass_names"]),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(
            json.dumps(
                {
                    "fine_to_super": list(self.fine_to_super),
                    "superclass_names": list(self.superclass_names),
                },
                indent=1,
            ),
            encoding="utf-8",
        )


def map_to_superclasses(probabilities: np.ndarray, mapping: SuperclassMap) -> np.ndarray:
    """Sum fine-class probabilities into superclasses; rows keep total mass."""
    n, c_fine = probabilities.shape
    if c_fine != len(mapping.fine_to_super):
        raise ValueError(
            f"map covers {len(mapping.fine_to_super)} fine classes, got {c_fine} columns"
        )
    c_super = len(mapping.superclass_names)
    pooled = np.zeros((n, c_super), dtype=probabilities.dtype)
    np.add.at(pooled.T, np.asarray(mapping.fine_to_super), probabilities.T)
    return pooled


@dataclass
class BiasReport:
    shape_match: float
    texture_match: float
    shape_bias: float | None  # absent when no item was decided
    n_items: int
    n_decided: int
    per_shape_class: dict[int, dict[str, float]] = field(default_factory=dict)
    per_texture_class: dict[int, dict[str, float]] = field(default_factory=dict)
    decisions: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "shape_match": self.shape_match,
            "texture_match": self.texture_match,
            "shape_bias": self.shape_bias,
            "n_items": self.n_items,
            "n_decided": self.n_decided,
            "per_shape_class": {str(k): v for k, v in self.per_shape_class.items()},
            "per_texture_class": {str(k): v for k, v in self.per_texture_class.items()},
            "decisions": self.decisions,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1), encoding="utf-8")

    def write_csv(self, path) -> None:
        """Flat rows: class,attribute,metric,value (global rows use class=-1)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "attribute", "metric", "value"])
            writer.writerow([-1, "all", "shape_match", self.shape_match])
            writer.writerow([-1, "all", "texture_match", self.texture_match])
            if self.shape_bias is not None:
                writer.writerow([-1, "all", "shape_bias", self.shape_bias])
            for cls, metrics in sorted(self.per_shape_class.items()):
                for metric, value in metrics.items():
                    if value is not None:
                        writer.writerow([cls, "shape", metric, value])
            for cls, metrics in sorted(self.per_texture_class.items()):
                for metric, value in metrics.items():
                    writer.writerow([cls, "texture", metric, value])


def shape_bias_from_matches(shape_match: float, texture_match: float) -> float | None:
    """Pure arithmetic: bias = shape / (shape + texture), absent at 0/0."""
    denom = shape_match + texture_match
    if denom <= 0:
        return None
    return shape_match / denom


def compute_bias_report(records: list[dict]) -> BiasReport:
    """Score per-item prediction records over a cue-conflict set.

    Each record needs ``predicted``, ``shape_label``, ``texture_label`` (and
    optionally ``id``). Items whose shape and texture labels collide (possible
    only in malformed external data, or after superclass pooling) are excluded
    with a warning.
    """
    usable = []
    for rec in records:
        if rec["shape_label"] == rec["texture_label"]:
            warnings.warn(
                f"item {rec.get('id', '?')} has colliding shape/texture labels; excluded",
                stacklevel=2,
            )
            continue
        usable.append(rec)
    decisions = []
    for rec in usable:
        if rec["predicted"] == rec["shape_label"]:
            matched = "shape"
        elif rec["predicted"] == rec["texture_label"]:
            matched = "texture"
        else:
            matched = "neither"
        decisions.append(
            {
                "id": rec.get("id"),
                "predicted": rec["predicted"],
                "shape_label": rec["shape_label"],
                "texture_label": rec["texture_label"],
                "matched": matched,
            }
        )
    n = len(decisions)
    n_shape = sum(d["matched"] == "shape" for d in decisions)
    n_texture = sum(d["matched"] == "texture" for d in decisions)
    shape_match = n_shape / n if n else 0.0
    texture_match = n_texture / n if n else 0.0

    per_shape: dict[int, dict[str, float]] = {}
    for cls in sorted({d["shape_label"] for d in decisions}):
        sub = [d for d in decisions if d["shape_label"] == cls]
        sm = sum(d["matched"] == "shape" for d in sub) / len(sub)
        tm = sum(d["matched"] == "texture" for d in sub) / len(sub)
        per_shape[cls] = {"shape_match": sm, "shape_bias": shape_bias_from_matches(sm, tm)}
    per_texture: dict[int, dict[str, float]] = {}
    for cls in sorted({d["texture_label"] for d in decisions}):
        sub = [d for d in decisions if d["texture_label"] == cls]
        tm = sum(d["matched"] == "texture" for d in sub) / len(sub)
        per_texture[cls] = {"texture_match": tm}

    return BiasReport(
        shape_match=shape_match,
        texture_match=texture_match,
        shape_bias=shape_bias_from_matches(shape_match, texture_match),
        n_items=n,
        n_decided=n_shape + n_texture,
        per_shape_class=per_shape,
        per_texture_class=per_texture,
        decisions=decisions,
    )
