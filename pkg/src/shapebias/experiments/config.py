"""Experiment configuration: strict parsing, defaults, canonical hashing.

Configs are YAML (JSON works too). Unknown keys are rejected with their full
path; the resolved config (defaults filled) is echoed into the run directory
and hashed canonically, so every emitted number traces back to it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the field path."""


def _from_mapping(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    kwargs = {f.name: data[f.name] for f in dataclasses.fields(cls) if f.name in data}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class DatasetSection:
    generator: str = "navon"  # navon | patchwork | corruption | manifest
    seed: int = 0
    extent: int = 64
    # navon
    alphabet_size: int = 26
    positions: int = 5
    cell_extent: int = 6
    # patchwork
    pairing: str = "conflict"
    exemplars_per_cell: int = 1
    silhouettes: tuple = ()
    textures: tuple = ()
    # corruption
    base_manifest: str = ""
    corruptions: tuple = ()
    # manifest
    path: str = ""

    def __post_init__(self):
        if self.generator not in ("navon", "patchwork", "corruption", "manifest"):
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.generator == "manifest" and not self.path:
            raise ValueError("manifest datasets need a path")
        if self.generator == "corruption" and not self.base_manifest:
            raise ValueError("corruption datasets need a base_manifest")


@dataclass(frozen=True)
class ModelSection:
    family: str = "mini_alexnet"
    width: float = 1.0
    patch_bound: int = 17
    checkpoint: str = ""  # decoding: load instead of training


@dataclass(frozen=True)
class TrainingSection:
    optimizer: str = "adam"
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    momentum: float = 0.9
    epochs: int = 90
    batch_size: int = 64
    schedule: str = "constant"  # constant | step_decay | cosine_decay
    decay_epochs: tuple = ()
    decay_factor: float = 0.1
    precision: str = "float32"
    restore_best: bool = True

    def __post_init__(self):
        if self.schedule not in ("constant", "step_decay", "cosine_decay"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class SplitsSection:
    mode: str = "class_holdout"  # class_holdout | exemplar_holdout | random
    holdout_classes: int = 3
    n_splits: int = 5
    val_fraction: float = 0.15  # random mode (bias-sweep train/val carve)

    def __post_init__(self):
        if self.mode not in ("class_holdout", "exemplar_holdout", "random"):
            raise ValueError(f"unknown split mode {self.mode!r}")


@dataclass(frozen=True)
class SweepSection:
    tasks: tuple = ("shape", "texture")
    fractions: tuple = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    min_areas: tuple = ()
    augmentation_ladder: tuple = ()  # entries: {name, ops: [...]}
    learning_rates: tuple = ()
    weight_decays: tuple = ()
    taps: tuple = ("last_conv", "post_pool")
    probe_kinds: tuple = ("linear",)
    knn_k: int = 5
    probe_epochs: int = 40
    probe_learning_rate: float = 1e-2

    def __post_init__(self):
        for t in self.tasks:
            if t not in ("shape", "texture"):
                raise ValueError(f"unknown task {t!r}")
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ValueError(f"fraction {f} outside (0, 1]")


@dataclass(frozen=True)
class PermutationSection:
    count: int = 1000
    direction: str = "greater"


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "learning_dynamics"  # learning_dynamics | bias_sweep | decoding
    output_dir: str = "runs/out"
    seeds: tuple = (0, 1, 2)
    jobs: int = 1
    dataset: DatasetSection = field(default_factory=DatasetSection)
    eval_dataset: DatasetSection | None = None
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    augmentation: tuple = ()  # declarative op list: [{op, p, ...}]
    splits: SplitsSection = field(default_factory=SplitsSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    permutation: PermutationSection = field(default_factory=PermutationSection)

    def __post_init__(self):
        if self.kind not in ("learning_dynamics", "bias_sweep", "decoding"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.seeds:
            raise ValueError("seed list must be nonempty")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


_NESTED = {
    "dataset": DatasetSection,
    "eval_dataset": DatasetSection,
    "model": ModelSection,
    "training": TrainingSection,
    "splits": SplitsSection,
    "sweep": SweepSection,
    "permutation": PermutationSection,
}


def config_from_dict(data: dict, path: str = "config") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    data = dict(data)
    for key, cls in _NESTED.items():
        if key in data and data[key] is not None:
            data[key] = _from_mapping(cls, _tupleize(data[key]), f"{path}.{key}")
    if isinstance(data.get("seeds"), list):
        data["seeds"] = tuple(data["seeds"])
    if isinstance(data.get("augmentation"), list):
        data["augmentation"] = tuple(dict(d) for d in data["augmentation"])
    unknown = set(data) - {f.name for f in dataclasses.fields(ExperimentConfig)}
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    try:
        return ExperimentConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _tupleize(data):
    """Lists from YAML become tuples so sections stay hashable."""
    if isinstance(data, dict):
        return {k: _tupleize(v) for k, v in data.items()}
    if isinstance(data, list):
        return tuple(_tupleize(v) for v in data)
    return data


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data, path=str(path))


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    return obj


def resolved_dict(config: ExperimentConfig) -> dict:
    return _jsonable(config)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(resolved_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
