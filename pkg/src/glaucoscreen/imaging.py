"""Image IO, CLAHE, ROI cropping, bilinear resizing and training augmentation.

Images are float arrays of shape ``(3, H, W)`` with values in ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import kernels

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class RoiBox:
    """Pixel box, end-exclusive: rows ``y0:y1``, columns ``x0:x1``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def validate(self, height: int, width: int) -> "RoiBox":
        if not (0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height):
            raise ValueError(f"ROI box {self} is invalid for a {height}x{width} image")
        return self

    def contains(self, other: "RoiBox") -> bool:
        return (
            self.x0 <= other.x0 and self.y0 <= other.y0 and self.x1 >= other.x1 and self.y1 >= other.y1
        )


@dataclass(frozen=True)
class AugmentPolicy:
    flip_h_prob: float = 0.5
    flip_v_prob: float = 0.5
    jitter_strength: float = 0.2
    blur_sigma_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for name in ("flip_h_prob", "flip_v_prob", "jitter_strength"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        lo, hi = self.blur_sigma_range
        if lo < 0 or lo > hi:
            raise ValueError(f"bad blur_sigma_range {self.blur_sigma_range}")

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(0.0, 0.0, 0.0, (0.0, 0.0))


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3 or image.shape[1] < 1 or image.shape[2] < 1:
        raise ValueError(f"expected a 3xHxW image, got shape {image.shape}")
    return image


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(image: np.ndarray) -> np.ndarray:
    """``(3, H, W)`` float image -> ``(H, W, 3)`` uint8 array."""
    image = check_image(image)
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_image(path: str | Path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")
    return path


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; same-size resize is the identity."""
    image = check_image(image)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    if image.shape[1:] == (out_h, out_w):
        return np.array(image, dtype=np.float64)
    img = np.ascontiguousarray(image, dtype=np.float64)
    return np.clip(kernels.resize_bilinear(img, out_h, out_w), 0.0, 1.0)


def crop_roi(image: np.ndarray, box: RoiBox, out_side: int = 800) -> np.ndarray:
    image = check_image(image)
    box.validate(image.shape[1], image.shape[2])
    crop = image[:, box.y0 : box.y1, box.x0 : box.x1]
    return resize_bilinear(crop, out_side, out_side)


def center_box(height: int, width: int, frac: float = 0.6) -> RoiBox:
    """Centered square box whose side is ``frac`` of the shorter image side."""
    side = max(1, int(round(frac * min(height, width))))
    y0 = (height - side) // 2
    x0 = (width - side) // 2
    return RoiBox(x0, y0, x0 + side, y0 + side)


def clahe(image: np.ndarray, clip_limit: float = 2.0, tile_grid: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Contrast limited adaptive histogram equalization of the luminance plane.

    The image is split into luma and two color-difference planes; only luma is
    equalized (per tile, clipped histogram, bilinear blend of neighbouring tile
    mappings) before recomposing.  Tiles whose histogram occupies a single bin
    carry no contrast and are mapped to themselves.  ``clip_limit`` is in units
    of the mean bin count; ``np.inf`` disables clipping.
    """
    image = check_image(image)
    rows, cols = tile_grid
    _, h, w = image.shape
    if rows < 1 or cols < 1 or rows > h or cols > w:
        raise ValueError(f"tile grid {tile_grid} does not fit a {h}x{w} image")
    if not clip_limit > 0:
        raise ValueError(f"clip_limit must be positive, got {clip_limit}")
    img = np.asarray(image, dtype=np.float64)
    luma = np.tensordot(_LUMA, img, axes=1)
    cb = img[2] - luma
    cr = img[0] - luma
    new_luma = kernels.clahe_luma(np.ascontiguousarray(luma), float(clip_limit), rows, cols)
    r = new_luma + cr
    b = new_luma + cb
    g = (new_luma - _LUMA[0] * r - _LUMA[2] * b) / _LUMA[1]
    return np.clip(np.stack([r, g, b]), 0.0, 1.0)


def augment(image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Random flips, brightness/contrast jitter and Gaussian blur, in that order.

    The same number of draws is taken from ``rng`` whatever the policy, so two
    calls with equally seeded generators give identical output.
    """
    image = check_image(image)
    out = np.array(image, dtype=np.float64)
    u_h, u_v = rng.random(2)
    s = policy.jitter_strength
    bright, contrast = rng.uniform(1.0 - s, 1.0 + s, size=2)
    lo, hi = policy.blur_sigma_range
    sigma = rng.uniform(lo, hi)

    if u_h < policy.flip_h_prob:
        out = out[:, :, ::-1]
    if u_v < policy.flip_v_prob:
        out = out[:, ::-1, :]
    if s > 0:
        out = out * bright
        mean = out.mean()
        out = (out - mean) * contrast + mean
    if sigma > 0:
        out = gaussian_filter(out, sigma=(0.0, sigma, sigma), mode="reflect")
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0))
