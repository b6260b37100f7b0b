"""Patchwork stimuli: procedural silhouettes filled with procedural textures.

Stand-in for style-transfer cue conflict at desk scale: the silhouette is the
shape cue, the fill pattern the texture cue, on a uniform dark background.
Exemplar variation comes from silhouette jitter (position, scale, rotation)
and texture phase; exemplar e of cell (s, t) reuses shape exemplar e and
texture exemplar (e + s) mod E, so holding out one exemplar index of either
attribute removes a varied, non-degenerate slice of the set.
"""

from __future__ import annotations

import numpy as np

from .raster import SILHOUETTE_NAMES, TEXTURE_NAMES, silhouette_mask, texture_field
from .types import PatchworkConfig, Stimulus, StimulusSet, item_rng, quantize

BACKGROUND = 20.0 / 255.0  # on the 8-bit grid so quantization keeps it exact


class RenderError(ValueError):
    pass


def _resolve(config: PatchworkConfig) -> tuple[tuple[str, ...], tuple[str, ...]]:
    sils = config.silhouettes or SILHOUETTE_NAMES
    texs = config.textures or TEXTURE_NAMES
    unknown = [s for s in sils if s not in SILHOUETTE_NAMES] + [
        t for t in texs if t not in TEXTURE_NAMES + ("constant_gray",)
    ]
    if unknown:
        raise ValueError(f"unknown inventory entries: {unknown}")
    if len(sils) < 2 or len(texs) < 2:
        raise ValueError("shape and texture class counts must be >= 2")
    return tuple(sils), tuple(texs)


def _shape_exemplar_params(seed: int, shape_idx: int, exemplar: int):
    rng = item_rng(seed, 1, shape_idx, exemplar)
    return {
        "cx": float(rng.uniform(-0.08, 0.08)),
        "cy": float(rng.uniform(-0.08, 0.08)),
        "scale": float(rng.uniform(0.68, 0.85)),
        "rot_deg": float(rng.uniform(-15.0, 15.0)),
    }


def render_patchwork_item(
    config: PatchworkConfig,
    sils: tuple[str, ...],
    texs: tuple[str, ...],
    shape_idx: int,
    texture_idx: int,
    exemplar: int,
) -> tuple[np.ndarray, dict]:
    n_ex = config.exemplars_per_cell
    shape_ex = exemplar % n_ex
    tex_ex = (exemplar + shape_idx) % n_ex
    params = _shape_exemplar_params(config.seed, shape_idx, shape_ex)
    mask = silhouette_mask(sils[shape_idx], config.extent, **params)
    if mask.sum() < config.min_silhouette_px:
        raise RenderError(
            f"silhouette {sils[shape_idx]!r} exemplar {shape_ex} covers {int(mask.sum())} px "
            f"(< {config.min_silhouette_px})"
        )
    tex_rng = item_rng(config.seed, 2, texture_idx, tex_ex)
    field = texture_field(texs[texture_idx], config.extent, tex_rng)
    gray = np.full((config.extent, config.extent), BACKGROUND)
    gray[mask] = field[mask]
    inside_mean = float(field[mask].mean())
    if abs(inside_mean - BACKGROUND) < config.contrast_floor:
        raise RenderError(
            f"texture {texs[texture_idx]!r} mean {inside_mean:.3f} too close to background"
        )
    image = np.repeat(gray[:, :, None], 3, axis=2)
    provenance = {
        "generator": "patchwork",
        "seed": config.seed,
        "content_source": f"{sils[shape_idx]}-ex{shape_ex}",
        "style_source": f"{texs[texture_idx]}-ex{tex_ex}",
        "shape_exemplar": shape_ex,
        "texture_exemplar": tex_ex,
    }
    return image, provenance


def patchwork_item_count(config: PatchworkConfig) -> int:
    sils, texs = _resolve(config)
    if config.pairing == "congruent":
        return min(len(sils), len(texs)) * config.exemplars_per_cell
    # diagonal (matching index) pairs are excluded, mirroring cue-conflict sets
    return (len(sils) * len(texs) - min(len(sils), len(texs))) * config.exemplars_per_cell


def generate_patchwork(config: PatchworkConfig) -> StimulusSet:
    sils, texs = _resolve(config)
    if config.pairing == "congruent":
        pairs = [(i, i) for i in range(min(len(sils), len(texs)))]
    else:
        pairs = [(s, t) for s in range(len(sils)) for t in range(len(texs)) if s != t]
    items = []
    for s, t in pairs:
        for e in range(config.exemplars_per_cell):
            image, provenance = render_patchwork_item(config, sils, texs, s, t, e)
            items.append(
                Stimulus(
                    id=f"pw-s{s:02d}-t{t:02d}-e{e}",
                    image=quantize(image),
                    shape_label=s,
                    texture_label=t,
                    provenance=provenance,
                )
            )
    return StimulusSet(
        items=tuple(items),
        shape_classes=sils,
        texture_classes=texs,
        metadata={
            "generator": "patchwork",
            "seed": config.seed,
            "cue_conflict": config.pairing == "conflict",
            "pairing": config.pairing,
            "extent": config.extent,
            "exemplars_per_cell": config.exemplars_per_cell,
        },
    ).validate()
