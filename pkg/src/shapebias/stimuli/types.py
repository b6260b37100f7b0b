"""Stimulus containers and generator configurations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

DEFAULT_EXTENT = 64


class DatasetError(ValueError):
    """A stimulus set or manifest violates its contract."""


@dataclass(frozen=True)
class Stimulus:
    """An image carrying independent shape and texture labels.

    Provenance keys in use: ``generator``, ``seed``, ``position_index``,
    ``rotation_deg``, ``severity``, ``content_source``, ``style_source``.
    External datasets may carry extra keys; they round-trip untouched.
    """

    id: str
    image: np.ndarray  # H x W x 3, values in [0, 1]
    shape_label: int
    texture_label: int
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StimulusSet:
    items: tuple[Stimulus, ...]
    shape_classes: tuple[str, ...]
    texture_classes: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    @property
    def cue_conflict(self) -> bool:
        return bool(self.metadata.get("cue_conflict", False))

    def validate(self) -> "StimulusSet":
        seen: set[str] = set()
        for item in self.items:
            if item.id in seen:
                raise DatasetError(f"duplicate stimulus id {item.id!r}")
            seen.add(item.id)
            if not 0 <= item.shape_label < len(self.shape_classes):
                raise DatasetError(f"{item.id}: shape_label {item.shape_label} out of range")
            if not 0 <= item.texture_label < len(self.texture_classes):
                raise DatasetError(f"{item.id}: texture_label {item.texture_label} out of range")
            if self.cue_conflict and item.shape_label == item.texture_label:
                raise DatasetError(
                    f"{item.id}: cue-conflict set contains a matching shape/texture pair"
                )
            img = item.image
            if img.ndim != 3 or img.shape[2] != 3:
                raise DatasetError(f"{item.id}: image must be HxWx3, got {img.shape}")
            if img.min() < 0.0 or img.max() > 1.0:
                raise DatasetError(f"{item.id}: image values escape [0, 1]")
        return self

    def by_id(self) -> dict[str, Stimulus]:
        return {item.id: item for item in self.items}

    def subset(self, ids) -> "StimulusSet":
        table = self.by_id()
        return StimulusSet(
            items=tuple(table[i] for i in ids),
            shape_classes=self.shape_classes,
            texture_classes=self.texture_classes,
            metadata=dict(self.metadata),
        )


@dataclass(frozen=True)
class SplitPlan:
    task: str  # shape | texture
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    mode: str = "class_holdout"  # class_holdout | exemplar_holdout
    held_out_classes: tuple[int, ...] = ()
    held_out_shape_exemplar: int | None = None
    held_out_texture_exemplar: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("shape", "texture"):
            raise ValueError(f"unknown task {self.task!r}")
        overlap = set(self.train_ids) & set(self.val_ids)
        if overlap:
            raise DatasetError(f"split leaks {len(overlap)} ids between train and validation")


@dataclass(frozen=True)
class NavonConfig:
    """Large letters drawn as grids of small copies of another letter."""

    alphabet_size: int = 26
    positions: int = 5
    rotation_range: tuple[float, float] = (-45.0, 45.0)
    extent: int = DEFAULT_EXTENT
    cell_extent: int = 6  # pixel size of each small-glyph cell (grid density)
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.alphabet_size <= 26:
            raise ValueError("alphabet size must be in [2, 26]")
        if self.positions < 1:
            raise ValueError("positions must be >= 1")
        lo, hi = self.rotation_range
        if not (lo == -hi and 0 <= hi < 90):
            raise ValueError("rotation range must be a symmetric subinterval of (-90, 90)")
        if self.extent < 16:
            raise ValueError("extent too small")
        # big glyph is a 5x7 grid of cells; it must fit axis-aligned at every offset
        offset = 0.125 * self.extent
        if 3.5 * self.cell_extent + offset > self.extent / 2:
            raise ValueError(
                f"glyph too large for image extent: cell_extent={self.cell_extent}, extent={self.extent}"
            )


@dataclass(frozen=True)
class PatchworkConfig:
    """Procedural silhouettes filled with procedural textures."""

    silhouettes: tuple[str, ...] = ()  # empty -> full built-in inventory
    textures: tuple[str, ...] = ()
    exemplars_per_cell: int = 1
    pairing: str = "conflict"  # conflict (off-diagonal) | congruent (diagonal)
    extent: int = DEFAULT_EXTENT
    contrast_floor: float = 0.15
    min_silhouette_px: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.pairing not in ("conflict", "congruent"):
            raise ValueError(f"unknown pairing {self.pairing!r}")
        if self.exemplars_per_cell < 1:
            raise ValueError("exemplars_per_cell must be >= 1")
        if self.extent < 16:
            raise ValueError("extent too small")


@dataclass(frozen=True)
class CorruptionConfig:
    """Noise-as-texture: corrupted copies of clean shape-labeled images."""

    corruptions: tuple[str, ...] = ()  # empty -> full built-in inventory
    severities: tuple[int, ...] = (1, 2, 3, 4, 5)
    seed: int = 0

    def __post_init__(self):
        if any(s not in (1, 2, 3, 4, 5) for s in self.severities):
            raise ValueError("severities must lie in {1..5}")
        if not self.severities:
            raise ValueError("at least one severity required")


def item_rng(seed: int, *indices: int) -> np.random.Generator:
    """Counter-based substream for one item: independent of all other items."""
    return np.random.default_rng([seed, *indices])


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so PNG round trips are value-exact."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)
