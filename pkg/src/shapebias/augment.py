"""Augmentation operators with probability gating and pipeline composition.

All operators map [0,1] HxWx3 images to [0,1] images. Stochastic operators
draw every sample from the generator they are handed; a pipeline derives one
substream per (seed, item index, op index), so augmentation is reproducible
item by item and safe to parallelize.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from .stimuli.raster import resize_bilinear

_ASPECT_DEFAULT = (0.75, 4.0 / 3.0)


# ---------------------------------------------------------------------------
# colour helpers
# ---------------------------------------------------------------------------

_LUMA = np.array([0.299, 0.587, 0.114])


def _to_gray(image: np.ndarray) -> np.ndarray:
    return image @ _LUMA


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    spread = maxc - minc
    s = np.where(maxc > 0, spread / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(spread > 0, spread, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(spread > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    channels = [
        np.choose(i, [v, q, p, p, t, v]),
        np.choose(i, [t, v, v, q, p, p]),
        np.choose(i, [p, p, t, v, v, q]),
    ]
    return np.stack(channels, axis=-1)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def sample_crop_geometry(
    rng: np.random.Generator,
    h: int,
    w: int,
    min_area: float,
    max_area: float,
    aspect_range: tuple[float, float],
    attempts: int = 10,
):
    """Sample a crop box (y0, x0, ch, cw) or None after failed attempts.

    Area fraction is uniform on [min_area, max_area]; aspect is log-uniform.
    Extents round up, so the realized area fraction never drops below the
    sampled one.
    """
    for _ in range(attempts):
        area = rng.uniform(min_area, max_area) * h * w
        aspect = float(np.exp(rng.uniform(np.log(aspect_range[0]), np.log(aspect_range[1]))))
        cw = int(np.ceil(np.sqrt(area * aspect)))
        ch = int(np.ceil(np.sqrt(area / aspect)))
        if cw <= w and ch <= h:
            y0 = int(rng.integers(0, h - ch + 1))
            x0 = int(rng.integers(0, w - cw + 1))
            return y0, x0, ch, cw
    return None


def random_resized_crop(
    image: np.ndarray,
    rng: np.random.Generator,
    target_extent: int,
    min_area: float = 0.08,
    max_area: float = 1.0,
    aspect_range: tuple[float, float] = _ASPECT_DEFAULT,
) -> np.ndarray:
    if not 0.0 < min_area <= max_area <= 1.0:
        raise ValueError(f"area range ({min_area}, {max_area}) not within (0, 1]")
    if aspect_range[0] <= 0:
        raise ValueError("aspect range must be positive")
    h, w = image.shape[:2]
    box = sample_crop_geometry(rng, h, w, min_area, max_area, aspect_range)
    if box is None:
        # fall back to the largest centred square
        side = min(h, w)
        y0, x0, ch, cw = (h - side) // 2, (w - side) // 2, side, side
    else:
        y0, x0, ch, cw = box
    crop = image[y0 : y0 + ch, x0 : x0 + cw]
    return resize_bilinear(crop, target_extent, target_extent)


def center_crop(image: np.ndarray, target_extent: int) -> np.ndarray:
    """Resize the shorter side to target*(256/224), then crop the centre square."""
    h, w = image.shape[:2]
    if min(h, w) < 2:
        raise ValueError(f"degenerate input extent {image.shape[:2]}")
    short = int(round(target_extent * 256.0 / 224.0))
    scale = short / min(h, w)
    nh, nw = max(short, int(round(h * scale))), max(short, int(round(w * scale)))
    resized = resize_bilinear(image, nh, nw)
    y0 = (nh - target_extent) // 2
    x0 = (nw - target_extent) // 2
    return resized[y0 : y0 + target_extent, x0 : x0 + target_extent]


def horizontal_flip(image: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    if p > 0 and rng.random() < p:
        return image[:, ::-1].copy()
    return image


def rotate_quarter(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if image.shape[0] != image.shape[1]:
        raise ValueError("rotate_quarter requires a square image")
    quarters = int(rng.integers(1, 4))
    return rotate_exact(image, quarters)


def rotate_exact(image: np.ndarray, quarters: int) -> np.ndarray:
    """Exact pixel permutation; one quarter turn is clockwise, so pixel
    (0, 0) maps to (0, W-1)."""
    return np.ascontiguousarray(np.rot90(image, k=-quarters, axes=(0, 1)))


def cutout(
    image: np.ndarray,
    rng: np.random.Generator,
    patch_fraction: float = 0.25,
    fill: float = 0.5,
) -> np.ndarray:
    if not 0.0 < patch_fraction < 1.0:
        raise ValueError(f"patch fraction {patch_fraction} not in (0, 1)")
    h, w = image.shape[:2]
    side = int(round(np.sqrt(patch_fraction * h * w)))
    out = image.copy()
    if side == 0:
        return out
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y0, x0 = max(0, cy - side // 2), max(0, cx - side // 2)
    y1, x1 = min(h, cy - side // 2 + side), min(w, cx - side // 2 + side)
    out[y0:y1, x0:x1] = fill
    return out


def color_distort(image: np.ndarray, rng: np.random.Generator, strength: float = 0.8) -> np.ndarray:
    """Jitter (brightness/contrast/saturation/hue, random order) with
    probability 0.8, otherwise channel-averaged colour drop."""
    if not 0.0 < strength <= 1.0:
        raise ValueError(f"strength {strength} not in (0, 1]")
    x = image.astype(np.float64)
    if rng.random() < 0.8:
        b = 0.8 * strength
        factors = {
            "brightness": rng.uniform(max(0.0, 1 - b), 1 + b),
            "contrast": rng.uniform(max(0.0, 1 - b), 1 + b),
            "saturation": rng.uniform(max(0.0, 1 - b), 1 + b),
            "hue": rng.uniform(-0.2 * strength, 0.2 * strength),
        }
        for name in rng.permutation(["brightness", "contrast", "saturation", "hue"]):
            f = factors[name]
            if name == "brightness":
                x = x * f
            elif name == "contrast":
                m = _to_gray(np.clip(x, 0, 1)).mean()
                x = (x - m) * f + m
            elif name == "saturation":
                gray = _to_gray(np.clip(x, 0, 1))[..., None]
                x = gray + (x - gray) * f
            else:
                hsv = _rgb_to_hsv(np.clip(x, 0, 1))
                hsv[..., 0] = (hsv[..., 0] + f) % 1.0
                x = _hsv_to_rgb(hsv)
    else:
        x = np.repeat(_to_gray(x)[..., None], 3, axis=2)
    return np.clip(x, 0.0, 1.0).astype(image.dtype)


def blur_kernel_extent(width: int) -> int:
    """Nearest odd integer to 10% of the image width, at least 3."""
    k0 = 0.1 * width
    k = int(round(k0))
    if k % 2 == 0:
        k = k + 1 if (k + 1) - k0 < k0 - (k - 1) else k - 1
    return max(k, 3)


def gaussian_blur(
    image: np.ndarray,
    rng: np.random.Generator,
    sigma_range: tuple[float, float] = (0.1, 2.0),
) -> np.ndarray:
    if sigma_range[0] <= 0 or sigma_range[1] < sigma_range[0]:
        raise ValueError(f"invalid sigma range {sigma_range}")
    k = blur_kernel_extent(image.shape[1])
    sigma = rng.uniform(*sigma_range)
    r = k // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    out = convolve1d(image.astype(np.float64), kernel, axis=0, mode="reflect")
    out = convolve1d(out, kernel, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def gaussian_noise(image: np.ndarray, rng: np.random.Generator, sigma: float = 0.1) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return image.copy()
    noisy = image.astype(np.float64) + rng.normal(0.0, sigma, image.shape)
    return np.clip(noisy, 0.0, 1.0).astype(image.dtype)


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def sobel_filter(image: np.ndarray) -> np.ndarray:
    gray = _to_gray(image.astype(np.float64))
    padded = np.pad(gray, 1, mode="reflect")
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    for dy in range(3):
        for dx in range(3):
            window = padded[dy : dy + gray.shape[0], dx : dx + gray.shape[1]]
            gx += _SOBEL_X[dy, dx] * window
            gy += _SOBEL_Y[dy, dx] * window
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return np.repeat(mag[..., None], 3, axis=2).astype(image.dtype)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

_OP_PARAMS = {
    "random_resized_crop": {"min_area", "max_area", "aspect_range"},
    "center_crop": set(),
    "horizontal_flip": set(),
    "rotate_quarter": set(),
    "cutout": {"patch_fraction", "fill"},
    "color_distort": {"strength"},
    "gaussian_blur": {"sigma_range"},
    "gaussian_noise": {"sigma"},
    "sobel_filter": set(),
}


@dataclass(frozen=True)
class AugmentOp:
    kind: str
    p: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _OP_PARAMS:
            raise ValueError(f"unknown augmentation op {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"op probability {self.p} not in [0, 1]")
        extra = set(self.params) - _OP_PARAMS[self.kind]
        if extra:
            raise ValueError(f"op {self.kind!r} got unknown params {sorted(extra)}")


@dataclass(frozen=True)
class AugmentPipeline:
    ops: tuple[AugmentOp, ...] = ()
    seed: int = 0
    target_extent: int = 64


def _apply_op(op: AugmentOp, image: np.ndarray, rng: np.random.Generator, target: int) -> np.ndarray:
    kind = op.kind
    if kind == "random_resized_crop":
        return random_resized_crop(image, rng, target, **op.params)
    if kind == "center_crop":
        return center_crop(image, target)
    if kind == "horizontal_flip":
        return image[:, ::-1].copy()  # chance handled by the pipeline gate
    if kind == "rotate_quarter":
        return rotate_quarter(image, rng)
    if kind == "cutout":
        return cutout(image, rng, **op.params)
    if kind == "color_distort":
        return color_distort(image, rng, **op.params)
    if kind == "gaussian_blur":
        return gaussian_blur(image, rng, **op.params)
    if kind == "gaussian_noise":
        return gaussian_noise(image, rng, **op.params)
    return sobel_filter(image)


def apply_pipeline(pipeline: AugmentPipeline, image: np.ndarray, item_index: int) -> np.ndarray:
    """Apply ops in order, each gated by its own probability on a substream
    derived from (seed, item index, op index); output is resized to the
    target extent and clamped to [0, 1]."""
    out = image
    for op_index, op in enumerate(pipeline.ops):
        rng = np.random.default_rng([pipeline.seed, item_index, op_index])
        if op.p > 0 and rng.random() < op.p:
            out = _apply_op(op, out, rng, pipeline.target_extent)
    if out.shape[:2] != (pipeline.target_extent, pipeline.target_extent):
        out = resize_bilinear(out, pipeline.target_extent, pipeline.target_extent)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def pipeline_from_config(entries: list[dict], seed: int, target_extent: int) -> AugmentPipeline:
    """Build a pipeline from declarative config entries: [{op, p, <params>}]."""
    ops = []
    for entry in entries:
        entry = dict(entry)
        try:
            kind = entry.pop("op")
        except KeyError:
            raise ValueError(f"augmentation entry missing 'op': {entry}") from None
        p = entry.pop("p", 0.5)
        if "aspect_range" in entry:
            entry["aspect_range"] = tuple(entry["aspect_range"])
        if "sigma_range" in entry:
            entry["sigma_range"] = tuple(entry["sigma_range"])
        ops.append(AugmentOp(kind=kind, p=float(p), params=entry))
    return AugmentPipeline(ops=tuple(ops), seed=seed, target_extent=target_extent)
