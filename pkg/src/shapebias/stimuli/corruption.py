"""Noise-as-texture stimuli: corrupted copies of clean shape-labeled images.

Every base item is expanded by (corruption kind x severity); the corruption
kind becomes the texture label, the base class stays the shape label. The
built-in inventory is a 6-kind desk subset of the usual corruption suites.
"""

from __future__ import annotations

import numpy as np

from .raster import resize_bilinear
from .types import CorruptionConfig, Stimulus, StimulusSet, item_rng, quantize

# severity-indexed parameters, severity 1..5
_GAUSS_SIGMA = (0.04, 0.08, 0.13, 0.19, 0.26)
_SHOT_SCALE = (60.0, 25.0, 12.0, 5.0, 3.0)
_BLUR_SIGMA = (0.5, 0.9, 1.4, 2.0, 3.0)
_CONTRAST = (0.6, 0.45, 0.3, 0.2, 0.1)
_FOG = (0.15, 0.25, 0.35, 0.45, 0.55)
_PIXELATE = (0.6, 0.5, 0.4, 0.3, 0.22)

CORRUPTION_NAMES = ("gaussian_noise", "shot_noise", "blur", "contrast", "fog", "pixelate")


def _gaussian_blur_gray(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3 * sigma)))
    xs = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
    tmp = np.zeros_like(padded)
    for i, k in enumerate(kernel):
        tmp[:, radius:-radius] += k * padded[:, i : i + img.shape[1]]
    out = np.zeros_like(img)
    for i, k in enumerate(kernel):
        out += k * tmp[i : i + img.shape[0], radius:-radius]
    return out


def apply_corruption(
    image: np.ndarray, kind: str, severity: int, rng: np.random.Generator, sigma_override: float | None = None
) -> np.ndarray:
    """Corrupt a [0,1] HxWx3 image at a severity in 1..5."""
    if severity not in (1, 2, 3, 4, 5):
        raise ValueError(f"severity must be in 1..5, got {severity}")
    s = severity - 1
    if kind == "gaussian_noise":
        sigma = _GAUSS_SIGMA[s] if sigma_override is None else sigma_override
        return np.clip(image + rng.normal(0.0, sigma, image.shape) if sigma > 0 else image, 0, 1)
    if kind == "shot_noise":
        lam = _SHOT_SCALE[s]
        return np.clip(rng.poisson(image * lam) / lam, 0, 1)
    if kind == "blur":
        return np.clip(_gaussian_blur_gray(image, _BLUR_SIGMA[s]), 0, 1)
    if kind == "contrast":
        mean = image.mean()
        return np.clip((image - mean) * _CONTRAST[s] + mean, 0, 1)
    if kind == "fog":
        t = _FOG[s]
        yy = np.linspace(0, 1, image.shape[0])[:, None, None]
        haze = t * (0.75 + 0.5 * yy)  # denser toward the bottom
        return np.clip(image * (1 - haze) + haze, 0, 1)
    if kind == "pixelate":
        h, w = image.shape[:2]
        fh, fw = max(2, int(h * _PIXELATE[s])), max(2, int(w * _PIXELATE[s]))
        small = resize_bilinear(image, fh, fw)
        ri = (np.arange(h) * fh // h).clip(0, fh - 1)
        ci = (np.arange(w) * fw // w).clip(0, fw - 1)
        return np.clip(small[np.ix_(ri, ci)], 0, 1)
    raise KeyError(f"unknown corruption kind {kind!r}")


def corruption_item_count(
    n_shapes: int, n_corruptions: int, n_severities: int, n_exemplars: int
) -> int:
    """Closed-form item count for a balanced corruption set."""
    return n_shapes * n_corruptions * n_severities * n_exemplars


def generate_corruption_set(base: StimulusSet, config: CorruptionConfig) -> StimulusSet:
    if not base.items:
        raise ValueError("base set is empty")
    kinds = config.corruptions or CORRUPTION_NAMES
    unknown = [k for k in kinds if k not in CORRUPTION_NAMES]
    if unknown:
        raise ValueError(f"unknown corruption kinds: {unknown}")
    if len(kinds) < 2:
        raise ValueError("corruption class count must be >= 2")
    items = []
    index = 0
    for item in base.items:
        for ti, kind in enumerate(kinds):
            for severity in config.severities:
                rng = item_rng(config.seed, index)
                corrupted = apply_corruption(item.image.astype(np.float64), kind, severity, rng)
                items.append(
                    Stimulus(
                        id=f"{item.id}-{kind}-s{severity}",
                        image=quantize(corrupted),
                        shape_label=item.shape_label,
                        texture_label=ti,
                        provenance={
                            "generator": "corruption",
                            "seed": config.seed,
                            "severity": severity,
                            "base_id": item.id,
                        },
                    )
                )
                index += 1
    return StimulusSet(
        items=tuple(items),
        shape_classes=base.shape_classes,
        texture_classes=tuple(kinds),
        metadata={"generator": "corruption", "seed": config.seed, "cue_conflict": False},
    ).validate()
