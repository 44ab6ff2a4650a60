"""Dynamic window mechanism: turn feature-map score peaks into image patches.

Pipeline per scale: channel-summed ``k x k`` average pooling gives a score
map; its local maxima are ranked; the best ``p`` cells are mapped to a center
rate in ``(0, 1)`` relative to the feature map, scaled to image pixels, and
expanded into a fixed-size patch that is shifted back inside the image when it
would cross a border.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import kernels
from .imaging import check_image, resize_bilinear


@dataclass(frozen=True)
class DwmScaleConfig:
    kernel: int
    patch_h: int
    patch_w: int
    proposals: int

    def __post_init__(self):
        if self.kernel < 1 or self.patch_h < 1 or self.patch_w < 1 or self.proposals < 1:
            raise ValueError(f"invalid DWM scale {self}")


DEFAULT_SCALES = (DwmScaleConfig(3, 224, 224, 2), DwmScaleConfig(2, 112, 112, 2))


@dataclass(frozen=True)
class WindowProposal:
    scale_index: int
    score: float
    row: int
    col: int
    rate_h: float
    rate_w: float
    tl_y: int
    tl_x: int
    br_y: int
    br_x: int

    @property
    def box(self) -> tuple[int, int, int, int]:
        return self.tl_y, self.tl_x, self.br_y, self.br_x


def _as_fmap(fmap) -> np.ndarray:
    if hasattr(fmap, "detach"):
        fmap = fmap.detach().cpu().numpy()
    fmap = np.ascontiguousarray(fmap, dtype=np.float64)
    if fmap.ndim != 3:
        raise ValueError(f"feature map must be CxHxW, got shape {fmap.shape}")
    return fmap


def total_score_map(fmap, kernel: int) -> np.ndarray:
    """Sum over channels of the stride-1 ``kernel x kernel`` window means."""
    fmap = _as_fmap(fmap)
    _, h, w = fmap.shape
    if kernel < 1 or kernel > min(h, w):
        raise ValueError(f"kernel {kernel} does not fit a {h}x{w} feature map")
    return kernels.window_score_map(fmap, kernel)


def _ranked_cells(score: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Flat indices ordered by value descending, row-major among ties."""
    flat = score.ravel()
    idx = np.flatnonzero(mask) if mask is not None else np.arange(flat.size)
    order = np.argsort(-flat[idx], kind="stable")
    return idx[order]


def local_maxima(score: np.ndarray, nms_kernel: int = 3) -> list[tuple[int, int, float]]:
    if nms_kernel < 1 or nms_kernel % 2 == 0:
        raise ValueError(f"nms_kernel must be odd and >= 1, got {nms_kernel}")
    score = np.ascontiguousarray(score, dtype=np.float64)
    mask = kernels.local_max_mask(score, nms_kernel)
    w = score.shape[1]
    return [(int(i // w), int(i % w), float(score.flat[i])) for i in _ranked_cells(score, mask)]


def _round_half_away(x: Fraction) -> int:
    n = int(abs(x) + Fraction(1, 2))
    return n if x >= 0 else -n


def window_rate(
    loc: tuple[int, int], fm_size: tuple[int, int], score_size: tuple[int, int]
) -> tuple[Fraction, Fraction]:
    """Center of the score cell's window as a fraction of the feature-map side.

    Returned as exact fractions so that the pixel center can be rounded
    without floating point error.
    """
    row, col = loc
    hf, wf = fm_size
    sh, sw = score_size
    if not (0 <= row < sh and 0 <= col < sw):
        raise ValueError(f"location {loc} outside a {sh}x{sw} score map")
    if sh > hf or sw > wf:
        raise ValueError(f"score map {score_size} larger than feature map {fm_size}")
    rate_h = Fraction(2 * row + hf - sh + 1, 2 * hf)
    rate_w = Fraction(2 * col + wf - sw + 1, 2 * wf)
    return rate_h, rate_w


def _axis_bounds(rate, side: int, patch: int) -> tuple[int, int]:
    center = _round_half_away(Fraction(rate) * side)
    lo = center - patch // 2
    hi = center + patch // 2 + patch % 2
    if lo < 0:
        hi -= lo
        lo = 0
    if hi > side:
        lo -= hi - side
        hi = side
    return lo, hi


def window_bounds(
    rate: tuple, image_size: tuple[int, int], patch: tuple[int, int]
) -> tuple[int, int, int, int]:
    """``(tl_y, tl_x, br_y, br_x)`` of a patch centred at ``rate``, end-exclusive."""
    h, w = image_size
    ph, pw = patch
    if ph < 1 or pw < 1 or ph > h or pw > w:
        raise ValueError(f"patch {patch} does not fit a {h}x{w} image")
    tl_y, br_y = _axis_bounds(rate[0], h, ph)
    tl_x, br_x = _axis_bounds(rate[1], w, pw)
    return tl_y, tl_x, br_y, br_x


def _select_cells(score: np.ndarray, nms_kernel: int, count: int) -> list[int]:
    if score.size < count:
        raise ValueError(f"score map with {score.size} cells cannot give {count} proposals")
    mask = kernels.local_max_mask(score, nms_kernel)
    chosen = list(_ranked_cells(score, mask)[:count])
    if len(chosen) < count:
        rest = _ranked_cells(score, ~mask)
        chosen.extend(rest[: count - len(chosen)])
    return [int(c) for c in chosen]


def propose_windows(
    fmap,
    scales: Sequence[DwmScaleConfig] = DEFAULT_SCALES,
    image_size: tuple[int, int] = (299, 299),
    nms_kernel: int = 3,
) -> list[WindowProposal]:
    """Rank score peaks per scale and map them to image-space patches.

    Proposals are grouped by scale in config order and sorted by descending
    score inside each scale.  When a scale has fewer local maxima than
    requested, the next-best non-maximal cells fill the remaining slots.
    """
    fmap = _as_fmap(fmap)
    _, hf, wf = fmap.shape
    if nms_kernel < 1 or nms_kernel % 2 == 0:
        raise ValueError(f"nms_kernel must be odd and >= 1, got {nms_kernel}")
    out = []
    for si, scale in enumerate(scales):
        score = total_score_map(fmap, scale.kernel)
        sh, sw = score.shape
        for cell in _select_cells(score, nms_kernel, scale.proposals):
            row, col = divmod(cell, sw)
            rate = window_rate((row, col), (hf, wf), (sh, sw))
            tl_y, tl_x, br_y, br_x = window_bounds(rate, image_size, (scale.patch_h, scale.patch_w))
            out.append(
                WindowProposal(
                    scale_index=si,
                    score=float(score[row, col]),
                    row=row,
                    col=col,
                    rate_h=float(rate[0]),
                    rate_w=float(rate[1]),
                    tl_y=tl_y,
                    tl_x=tl_x,
                    br_y=br_y,
                    br_x=br_x,
                )
            )
    return out


def extract_patches(image: np.ndarray, proposals: Sequence[WindowProposal], out_side: int = 299) -> list[np.ndarray]:
    image = check_image(image)
    _, h, w = image.shape
    patches = []
    for p in proposals:
        if not (0 <= p.tl_y < p.br_y <= h and 0 <= p.tl_x < p.br_x <= w):
            raise ValueError(f"proposal box {p.box} outside a {h}x{w} image")
        crop = image[:, p.tl_y : p.br_y, p.tl_x : p.br_x]
        patches.append(resize_bilinear(crop, out_side, out_side))
    return patches
