"""Train/validation split protocols and training-set subsampling."""

from __future__ import annotations

import math

import numpy as np

from .types import DatasetError, SplitPlan, StimulusSet


def _other(task: str) -> str:
    return "texture" if task == "shape" else "shape"


def _label(item, attr: str) -> int:
    return item.shape_label if attr == "shape" else item.texture_label


def make_split(
    stimulus_set: StimulusSet,
    task: str,
    holdout: int | str = 3,
    seed: int = 0,
) -> SplitPlan:
    """Build a split for one task.

    ``holdout`` is either the number of whole classes of the *other*
    attribute to move into validation, or ``"exemplar"`` to hold out one
    shape exemplar index and one texture exemplar index (style-transfer-set
    protocol; requires exemplar provenance). No whole target class may end
    up absent from train.
    """
    if task not in ("shape", "texture"):
        raise ValueError(f"unknown task {task!r}")
    items = stimulus_set.items
    if holdout == "exemplar":
        return _exemplar_split(stimulus_set, task, seed)
    other = _other(task)
    other_classes = sorted({_label(it, other) for it in items})
    if holdout >= len(other_classes):
        raise DatasetError(
            f"cannot hold out {holdout} of {len(other_classes)} {other} classes"
        )
    rng = np.random.default_rng([seed, 0])
    held = set(rng.choice(other_classes, size=holdout, replace=False).tolist())
    val_ids = tuple(it.id for it in items if _label(it, other) in held)
    train_ids = tuple(it.id for it in items if _label(it, other) not in held)
    train_targets = {_label(it, task) for it in items if _label(it, other) not in held}
    all_targets = {_label(it, task) for it in items}
    missing = all_targets - train_targets
    if missing:
        raise DatasetError(
            f"holdout would empty {task} class(es) {sorted(missing)} from train"
        )
    return SplitPlan(
        task=task,
        train_ids=train_ids,
        val_ids=val_ids,
        mode="class_holdout",
        held_out_classes=tuple(sorted(held)),
        seed=seed,
    )


def _exemplar_split(stimulus_set: StimulusSet, task: str, seed: int) -> SplitPlan:
    items = stimulus_set.items
    try:
        shape_ex = sorted({it.provenance["shape_exemplar"] for it in items})
        tex_ex = sorted({it.provenance["texture_exemplar"] for it in items})
    except KeyError as exc:
        raise DatasetError("exemplar split requires exemplar provenance") from exc
    all_shapes = {it.shape_label for it in items}
    all_textures = {it.texture_label for it in items}
    for attempt in range(20):
        rng = np.random.default_rng([seed, attempt])
        hs = int(rng.choice(shape_ex))
        ht = int(rng.choice(tex_ex))
        val = [
            it
            for it in items
            if it.provenance["shape_exemplar"] == hs or it.provenance["texture_exemplar"] == ht
        ]
        train = [
            it
            for it in items
            if it.provenance["shape_exemplar"] != hs and it.provenance["texture_exemplar"] != ht
        ]
        train_shapes = {it.shape_label for it in train}
        train_textures = {it.texture_label for it in train}
        if train and val and train_shapes == all_shapes and train_textures == all_textures:
            return SplitPlan(
                task=task,
                train_ids=tuple(it.id for it in train),
                val_ids=tuple(it.id for it in val),
                mode="exemplar_holdout",
                held_out_shape_exemplar=hs,
                held_out_texture_exemplar=ht,
                seed=seed,
            )
    raise DatasetError("no exemplar holdout keeps every class in train")


def subsample_fraction(
    stimulus_set: StimulusSet, plan: SplitPlan, fraction: float, seed: int = 0
) -> SplitPlan:
    """Subsample train ids to ceil(fraction * n), keeping every shape and
    texture class that appears in the full training set represented."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return plan
    table = stimulus_set.by_id()
    train = [table[i] for i in plan.train_ids]
    n_keep = math.ceil(fraction * len(train))
    need_shape = {it.shape_label for it in train}
    need_texture = {it.texture_label for it in train}
    rng = np.random.default_rng([seed, 1])
    order = rng.permutation(len(train))
    chosen: set[int] = set()
    # first cover every class, then fill the quota
    for idx in order:
        it = train[idx]
        if it.shape_label in need_shape or it.texture_label in need_texture:
            chosen.add(int(idx))
            need_shape.discard(it.shape_label)
            need_texture.discard(it.texture_label)
    if len(chosen) > n_keep:
        raise DatasetError(
            f"fraction {fraction} keeps {n_keep} items but class coverage needs {len(chosen)}"
        )
    for idx in order:
        if len(chosen) >= n_keep:
            break
        chosen.add(int(idx))
    kept_ids = tuple(train[i].id for i in sorted(chosen))
    return SplitPlan(
        task=plan.task,
        train_ids=kept_ids,
        val_ids=plan.val_ids,
        mode=plan.mode,
        held_out_classes=plan.held_out_classes,
        held_out_shape_exemplar=plan.held_out_shape_exemplar,
        held_out_texture_exemplar=plan.held_out_texture_exemplar,
        seed=plan.seed,
    )
