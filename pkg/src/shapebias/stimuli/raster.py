"""Low-level rasterization: rotation, resampling, masks, procedural patterns."""

from __future__ import annotations

import numpy as np


def rotate_bilinear(image: np.ndarray, angle_deg: float, fill: float = 0.0) -> np.ndarray:
    """Rotate about the image center with bilinear resampling and fill."""
    if angle_deg == 0.0:
        return image.copy()
    h, w = image.shape[:2]
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    # inverse map: output pixel -> source coordinates
    ys = cos_t * (yy - cy) + sin_t * (xx - cx) + cy
    xs = -sin_t * (yy - cy) + cos_t * (xx - cx) + cx
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0

    def sample(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = np.full(yi.shape + image.shape[2:], fill, dtype=np.float64)
        vals[inside] = image[yi[inside], xi[inside]]
        return vals

    if image.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    out = (
        sample(y0, x0) * (1 - fy) * (1 - fx)
        + sample(y0, x0 + 1) * (1 - fy) * fx
        + sample(y0 + 1, x0) * fy * (1 - fx)
        + sample(y0 + 1, x0 + 1) * fy * fx
    )
    return out.astype(image.dtype)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centre sampling."""
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if image.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = image[np.ix_(y0, x0)] * (1 - fx) + image[np.ix_(y0, x1)] * fx
    bot = image[np.ix_(y1, x0)] * (1 - fx) + image[np.ix_(y1, x1)] * fx
    return (top * (1 - fy) + bot * fy).astype(image.dtype)


def value_noise(extent: int, cell: int, octaves: int, rng: np.random.Generator) -> np.ndarray:
    """Multi-octave value noise in [0, 1]: coarse random grids, upsampled and summed."""
    acc = np.zeros((extent, extent))
    amp_total = 0.0
    for o in range(octaves):
        c = max(2, cell // (2**o))
        amp = 0.5**o
        grid = rng.random((max(2, extent // c) + 1, max(2, extent // c) + 1))
        acc += amp * resize_bilinear(grid, extent, extent)
        amp_total += amp
    acc /= amp_total
    lo, hi = acc.min(), acc.max()
    return (acc - lo) / (hi - lo) if hi > lo else np.full_like(acc, 0.5)


# ---------------------------------------------------------------------------
# silhouette masks, drawn in normalized coordinates x, y in [-1, 1]
# ---------------------------------------------------------------------------

def _norm_coords(extent: int, cx: float, cy: float, scale: float, rot_deg: float):
    yy, xx = np.meshgrid(
        np.linspace(-1, 1, extent), np.linspace(-1, 1, extent), indexing="ij"
    )
    xx = (xx - cx) / scale
    yy = (yy - cy) / scale
    t = np.deg2rad(rot_deg)
    xr = np.cos(t) * xx + np.sin(t) * yy
    yr = -np.sin(t) * xx + np.cos(t) * yy
    return xr, yr


def _rects(x, y, rects):
    mask = np.zeros_like(x, dtype=bool)
    for x0, y0, x1, y1 in rects:
        mask |= (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    return mask


def _star(x, y, points, inner, outer):
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    # radius oscillates between outer (at spikes) and inner (between them)
    phase = (theta * points / (2 * np.pi)) % 1.0
    edge = inner + (outer - inner) * (2 * np.abs(phase - 0.5))
    return r <= edge


_SILHOUETTES = {
    "circle": lambda x, y: x**2 + y**2 <= 0.8**2,
    "square": lambda x, y: np.maximum(np.abs(x), np.abs(y)) <= 0.72,
    "triangle": lambda x, y: (y >= -0.7) & (y <= 0.85 - 1.9 * np.abs(x)),
    "star5": lambda x, y: _star(x, y, 5, 0.38, 0.92),
    "star6": lambda x, y: _star(x, y, 6, 0.45, 0.92),
    "plus": lambda x, y: _rects(x, y, [(-0.28, -0.85, 0.28, 0.85), (-0.85, -0.28, 0.85, 0.28)]),
    "ring": lambda x, y: (x**2 + y**2 <= 0.85**2) & (x**2 + y**2 >= 0.45**2),
    "bar_h": lambda x, y: _rects(
        x, y, [(-0.8, -0.85, -0.45, 0.85), (0.45, -0.85, 0.8, 0.85), (-0.8, -0.2, 0.8, 0.2)]
    ),
    "tee": lambda x, y: _rects(x, y, [(-0.85, -0.85, 0.85, -0.45), (-0.2, -0.85, 0.2, 0.85)]),
    "ell": lambda x, y: _rects(x, y, [(-0.8, -0.85, -0.4, 0.85), (-0.8, 0.45, 0.7, 0.85)]),
    "uu": lambda x, y: _rects(
        x, y, [(-0.8, -0.85, -0.45, 0.7), (0.45, -0.85, 0.8, 0.7), (-0.8, 0.4, 0.8, 0.78)]
    ),
    "cross_x": lambda x, y: (np.abs(np.abs(x) - np.abs(y)) <= 0.24) & (np.hypot(x, y) <= 1.05),
    "arrow": lambda x, y: ((x >= -0.1) & (x <= 0.9) & (np.abs(y) <= 0.9 - x))
    | _rects(x, y, [(-0.9, -0.25, 0.0, 0.25)]),
    "heart": lambda x, y: (x**2 + (1.18 * (-y) - 0.4 * np.sqrt(np.abs(x))) ** 2) <= 0.72,
    "crescent": lambda x, y: (x**2 + y**2 <= 0.85**2) & ((x - 0.42) ** 2 + y**2 >= 0.62**2),
    "bowtie": lambda x, y: (np.abs(y) <= np.abs(x) * 0.9) & (np.abs(x) <= 0.85),
}

SILHOUETTE_NAMES = tuple(_SILHOUETTES)


def silhouette_mask(
    name: str, extent: int, cx: float = 0.0, cy: float = 0.0, scale: float = 1.0, rot_deg: float = 0.0
) -> np.ndarray:
    x, y = _norm_coords(extent, cx, cy, scale, rot_deg)
    return _SILHOUETTES[name](x, y)


# ---------------------------------------------------------------------------
# procedural textures, mean-matched greyscale patterns in [0.25, 0.75]
# ---------------------------------------------------------------------------

def _stripes(extent, period, angle_deg, phase):
    yy, xx = np.meshgrid(np.arange(extent), np.arange(extent), indexing="ij")
    t = np.deg2rad(angle_deg)
    coord = xx * np.cos(t) + yy * np.sin(t)
    return np.where(np.sin(2 * np.pi * coord / period + phase) >= 0, 0.75, 0.25)


def _checker(extent, size, ox, oy):
    yy, xx = np.meshgrid(np.arange(extent), np.arange(extent), indexing="ij")
    return np.where(((xx + ox) // size + (yy + oy) // size) % 2 == 0, 0.75, 0.25)


def _dots(extent, spacing, radius, ox, oy):
    yy, xx = np.meshgrid(np.arange(extent), np.arange(extent), indexing="ij")
    dx = (xx + ox) % spacing - spacing / 2
    dy = (yy + oy) % spacing - spacing / 2
    return np.where(dx**2 + dy**2 <= radius**2, 0.75, 0.25)


def _grid_lines(extent, spacing, width, ox, oy):
    yy, xx = np.meshgrid(np.arange(extent), np.arange(extent), indexing="ij")
    on = ((xx + ox) % spacing < width) | ((yy + oy) % spacing < width)
    return np.where(on, 0.75, 0.25)


def _zigzag(extent, period, phase):
    yy, xx = np.meshgrid(np.arange(extent), np.arange(extent), indexing="ij")
    tri = np.abs(((xx + phase) % period) / period - 0.5) * 2 * period * 0.8
    return np.where(np.sin(2 * np.pi * (yy + tri) / period) >= 0, 0.75, 0.25)


def _rings(extent, period, phase, cx, cy):
    yy, xx = np.meshgrid(np.arange(extent), np.arange(extent), indexing="ij")
    r = np.hypot(xx - extent / 2 - cx, yy - extent / 2 - cy)
    return np.where(np.sin(2 * np.pi * r / period + phase) >= 0, 0.75, 0.25)


def _texture_field(name: str, extent: int, rng: np.random.Generator) -> np.ndarray:
    ph = rng.uniform(0, 2 * np.pi)
    o1, o2 = rng.integers(0, 16, size=2)
    if name == "stripes_h":
        return _stripes(extent, 8, 90, ph)
    if name == "stripes_v":
        return _stripes(extent, 8, 0, ph)
    if name == "stripes_d45":
        return _stripes(extent, 8, 45, ph)
    if name == "stripes_d135":
        return _stripes(extent, 8, 135, ph)
    if name == "stripes_h_fine":
        return _stripes(extent, 4, 90, ph)
    if name == "stripes_v_fine":
        return _stripes(extent, 4, 0, ph)
    if name == "checker":
        return _checker(extent, 6, o1, o2)
    if name == "checker_fine":
        return _checker(extent, 3, o1, o2)
    if name == "dots":
        return _dots(extent, 9, 2.8, o1, o2)
    if name == "dots_dense":
        return _dots(extent, 5, 1.6, o1, o2)
    if name == "grid":
        return _grid_lines(extent, 7, 2, o1, o2)
    if name == "zigzag":
        return _zigzag(extent, 10, float(o1))
    if name == "rings":
        return _rings(extent, 8, ph, float(o1) - 8, float(o2) - 8)
    if name == "noise_coarse":
        return 0.25 + 0.5 * (value_noise(extent, 12, 1, rng) >= 0.5)
    if name == "noise_multi":
        return 0.25 + 0.5 * value_noise(extent, 16, 3, rng)
    if name == "noise_fine":
        return 0.25 + 0.5 * (value_noise(extent, 3, 1, rng) >= 0.5)
    if name == "constant_gray":
        return np.full((extent, extent), 0.5)
    raise KeyError(f"unknown texture {name!r}")


TEXTURE_NAMES = (
    "stripes_h",
    "stripes_v",
    "stripes_d45",
    "stripes_d135",
    "stripes_h_fine",
    "stripes_v_fine",
    "checker",
    "checker_fine",
    "dots",
    "dots_dense",
    "grid",
    "zigzag",
    "rings",
    "noise_coarse",
    "noise_multi",
    "noise_fine",
)


def texture_field(name: str, extent: int, rng: np.random.Generator) -> np.ndarray:
    field = _texture_field(name, extent, rng)
    return field.astype(np.float64)
