"""Navon figures: a large letter tiled from small copies of another letter.

The big letter is a 5x7 grid of cells; each ON cell holds the texture letter
rendered at the cell extent. Items cover every (shape, texture != shape)
letter pair at each position: the image centre plus four diagonal offsets of
+/-12.5% of the extent. Each item is rotated by an angle drawn uniformly
from the configured range and sampled bilinearly over a black background.
"""

from __future__ import annotations

import numpy as np

from .glyphs import GLYPH_COLS, GLYPH_ROWS, LETTERS, glyph_bitmap, render_glyph
from .types import NavonConfig, Stimulus, StimulusSet, item_rng, quantize


def navon_item_count(config: NavonConfig) -> int:
    a = config.alphabet_size
    return a * (a - 1) * config.positions


def _positions(extent: int, count: int) -> list[tuple[float, float]]:
    off = 0.125 * extent
    all_five = [(0.0, 0.0), (-off, -off), (-off, off), (off, -off), (off, off)]
    return [all_five[i % 5] for i in range(count)]


def _glyph_canvas(shape_letter: str, texture_letter: str, cell: int) -> np.ndarray:
    big = glyph_bitmap(shape_letter)
    small = render_glyph(texture_letter, cell, cell).astype(np.float64)
    canvas = np.zeros((GLYPH_ROWS * cell, GLYPH_COLS * cell))
    for r in range(GLYPH_ROWS):
        for c in range(GLYPH_COLS):
            if big[r, c]:
                canvas[r * cell : (r + 1) * cell, c * cell : (c + 1) * cell] = small
    return canvas


def render_navon(
    shape_letter: str,
    texture_letter: str,
    position: tuple[float, float],
    rotation_deg: float,
    extent: int,
    cell: int,
) -> np.ndarray:
    from .raster import rotate_bilinear

    canvas = _glyph_canvas(shape_letter, texture_letter, cell)
    ch, cw = canvas.shape
    # pad to the rotation-safe square before rotating about the glyph centre
    d = int(np.ceil(np.hypot(ch, cw))) + 2
    padded = np.zeros((d, d))
    r0, c0 = (d - ch) // 2, (d - cw) // 2
    padded[r0 : r0 + ch, c0 : c0 + cw] = canvas
    rotated = rotate_bilinear(padded, rotation_deg, fill=0.0)

    img = np.zeros((extent, extent))
    cy = extent / 2 + position[1] - d / 2
    cx = extent / 2 + position[0] - d / 2
    y0, x0 = int(round(cy)), int(round(cx))
    # clamp the paste region; extreme rotation + offset may clip a corner sliver
    sy0, sx0 = max(0, -y0), max(0, -x0)
    ty0, tx0 = max(0, y0), max(0, x0)
    ty1, tx1 = min(extent, y0 + d), min(extent, x0 + d)
    img[ty0:ty1, tx0:tx1] = rotated[sy0 : sy0 + (ty1 - ty0), sx0 : sx0 + (tx1 - tx0)]
    gray = np.clip(img, 0.0, 1.0)
    return np.repeat(gray[:, :, None], 3, axis=2)


def generate_navon(config: NavonConfig) -> StimulusSet:
    letters = LETTERS[: config.alphabet_size]
    positions = _positions(config.extent, config.positions)
    items = []
    index = 0
    for si, shape_letter in enumerate(letters):
        for ti, texture_letter in enumerate(letters):
            if si == ti:
                continue
            for pi in range(config.positions):
                rng = item_rng(config.seed, index)
                angle = float(rng.uniform(*config.rotation_range))
                image = render_navon(
                    shape_letter, texture_letter, positions[pi], angle, config.extent, config.cell_extent
                )
                items.append(
                    Stimulus(
                        id=f"nav-{shape_letter}{texture_letter}-p{pi}",
                        image=quantize(image),
                        shape_label=si,
                        texture_label=ti,
                        provenance={
                            "generator": "navon",
                            "seed": config.seed,
                            "position_index": pi,
                            "rotation_deg": round(angle, 4),
                        },
                    )
                )
                index += 1
    return StimulusSet(
        items=tuple(items),
        shape_classes=tuple(letters),
        texture_classes=tuple(letters),
        metadata={
            "generator": "navon",
            "seed": config.seed,
            "cue_conflict": True,
            "extent": config.extent,
        },
    ).validate()
