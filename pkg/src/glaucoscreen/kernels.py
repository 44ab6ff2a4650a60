"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment variable
``GLAUCOSCREEN_DISABLE_NUMBA`` is unset (or ``0``).  Both paths are always
importable as ``<name>_nb`` / ``<name>_np`` so tests and benchmarks can compare
them directly; the unsuffixed names dispatch to the selected backend.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    nb = None
    HAVE_NUMBA = False

_FLAG = os.environ.get("GLAUCOSCREEN_DISABLE_NUMBA", "0").strip().lower()
USE_NUMBA = HAVE_NUMBA and _FLAG in ("", "0", "false", "no")

BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return nb.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# window score map: channel-summed k x k average pooling, stride 1, no padding
# ---------------------------------------------------------------------------


@_njit
def window_score_map_nb(fmap, k):
    c, h, w = fmap.shape
    sh = h - k + 1
    sw = w - k + 1
    flat = np.zeros((h, w))
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                flat[i, j] += fmap[ch, i, j]
    out = np.empty((sh, sw))
    inv = 1.0 / (k * k)
    for i in range(sh):
        for j in range(sw):
            s = 0.0
            for di in range(k):
                for dj in range(k):
                    s += flat[i + di, j + dj]
            out[i, j] = s * inv
    return out


def window_score_map_np(fmap, k):
    flat = fmap.sum(axis=0)
    win = sliding_window_view(flat, (k, k))
    return win.sum(axis=(2, 3)) * (1.0 / (k * k))


# ---------------------------------------------------------------------------
# local maxima mask, edge-replicated neighborhood
# ---------------------------------------------------------------------------


@_njit
def local_max_mask_nb(score, size):
    h, w = score.shape
    r = size // 2
    out = np.zeros((h, w), dtype=np.bool_)
    for i in range(h):
        for j in range(w):
            v = score[i, j]
            ok = True
            for di in range(-r, r + 1):
                ii = min(max(i + di, 0), h - 1)
                for dj in range(-r, r + 1):
                    jj = min(max(j + dj, 0), w - 1)
                    if score[ii, jj] > v:
                        ok = False
                        break
                if not ok:
                    break
            out[i, j] = ok
    return out


def local_max_mask_np(score, size):
    r = size // 2
    padded = np.pad(score, r, mode="edge")
    neigh = sliding_window_view(padded, (size, size)).max(axis=(2, 3))
    return score >= neigh


# ---------------------------------------------------------------------------
# bilinear resize, half-pixel centers, edge clamped
# ---------------------------------------------------------------------------


def _axis_weights(n_in, n_out):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


@_njit
def resize_bilinear_nb(img, out_h, out_w):
    c, h, w = img.shape
    out = np.empty((c, out_h, out_w))
    sy = h / out_h
    sx = w / out_w
    for oy in range(out_h):
        fy = (oy + 0.5) * sy - 0.5
        fy = min(max(fy, 0.0), h - 1.0)
        y0 = int(np.floor(fy))
        y1 = min(y0 + 1, h - 1)
        wy = fy - y0
        for ox in range(out_w):
            fx = (ox + 0.5) * sx - 0.5
            fx = min(max(fx, 0.0), w - 1.0)
            x0 = int(np.floor(fx))
            x1 = min(x0 + 1, w - 1)
            wx = fx - x0
            for ch in range(c):
                top = img[ch, y0, x0] * (1.0 - wx) + img[ch, y0, x1] * wx
                bot = img[ch, y1, x0] * (1.0 - wx) + img[ch, y1, x1] * wx
                out[ch, oy, ox] = top * (1.0 - wy) + bot * wy
    return out


def resize_bilinear_np(img, out_h, out_w):
    _, h, w = img.shape
    y0, y1, wy = _axis_weights(h, out_h)
    x0, x1, wx = _axis_weights(w, out_w)
    rows = img[:, y0, :] * (1.0 - wy)[None, :, None] + img[:, y1, :] * wy[None, :, None]
    return rows[:, :, x0] * (1.0 - wx) + rows[:, :, x1] * wx


# ---------------------------------------------------------------------------
# CLAHE on a single luminance plane
# ---------------------------------------------------------------------------


def _tile_edges(n, parts):
    return (np.arange(parts + 1) * n) // parts


def _interp_table(n, edges):
    """Per-pixel (lower tile, upper tile, upper weight) along one axis."""
    centers = (edges[:-1] + edges[1:]) / 2.0 - 0.5
    pos = np.arange(n, dtype=np.float64)
    t = np.interp(pos, centers, np.arange(len(centers), dtype=np.float64))
    t0 = np.floor(t).astype(np.int64)
    t1 = np.minimum(t0 + 1, len(centers) - 1)
    return t0, t1, t - t0


def _tile_luts(hist, npix, clip_limit, nbins):
    """Clipped-histogram CDF lookup; returns (lut, degenerate)."""
    if np.count_nonzero(hist) <= 1:
        return np.zeros(nbins), True
    h = hist.astype(np.float64)
    if np.isfinite(clip_limit):
        limit = max(clip_limit * npix / nbins, 1.0)
        excess = np.maximum(h - limit, 0.0).sum()
        h = np.minimum(h, limit) + excess / nbins
    return np.cumsum(h) / npix, False


def clahe_luma_np(luma, clip_limit, rows, cols, nbins=256):
    h, w = luma.shape
    bins = np.clip((luma * nbins).astype(np.int64), 0, nbins - 1)
    ey = _tile_edges(h, rows)
    ex = _tile_edges(w, cols)
    luts = np.zeros((rows, cols, nbins))
    degenerate = np.zeros((rows, cols), dtype=bool)
    for a in range(rows):
        for b in range(cols):
            tile = bins[ey[a] : ey[a + 1], ex[b] : ex[b + 1]]
            hist = np.bincount(tile.ravel(), minlength=nbins)
            luts[a, b], degenerate[a, b] = _tile_luts(hist, tile.size, clip_limit, nbins)
    ty0, ty1, wy = _interp_table(h, ey)
    tx0, tx1, wx = _interp_table(w, ex)

    def mapped(ta, tb):
        a = ta[:, None]
        b = tb[None, :]
        return np.where(degenerate[a, b], luma, luts[a, b, bins])

    top = mapped(ty0, tx0) * (1.0 - wx) + mapped(ty0, tx1) * wx
    bot = mapped(ty1, tx0) * (1.0 - wx) + mapped(ty1, tx1) * wx
    return top * (1.0 - wy)[:, None] + bot * wy[:, None]


@_njit
def _clahe_luts_nb(bins, ey, ex, clip_limit, nbins):
    rows = ey.shape[0] - 1
    cols = ex.shape[0] - 1
    luts = np.zeros((rows, cols, nbins))
    degenerate = np.zeros((rows, cols), dtype=np.bool_)
    hist = np.zeros(nbins)
    for a in range(rows):
        for b in range(cols):
            hist[:] = 0.0
            for i in range(ey[a], ey[a + 1]):
                for j in range(ex[b], ex[b + 1]):
                    hist[bins[i, j]] += 1.0
            npix = (ey[a + 1] - ey[a]) * (ex[b + 1] - ex[b])
            occupied = 0
            for v in range(nbins):
                if hist[v] > 0:
                    occupied += 1
            if occupied <= 1:
                degenerate[a, b] = True
                continue
            if np.isfinite(clip_limit):
                limit = max(clip_limit * npix / nbins, 1.0)
                excess = 0.0
                for v in range(nbins):
                    if hist[v] > limit:
                        excess += hist[v] - limit
                        hist[v] = limit
                add = excess / nbins
                for v in range(nbins):
                    hist[v] += add
            acc = 0.0
            for v in range(nbins):
                acc += hist[v]
                luts[a, b, v] = acc / npix
    return luts, degenerate


@_njit
def _clahe_apply_nb(luma, bins, luts, degenerate, ty0, ty1, wy, tx0, tx1, wx):
    h, w = luma.shape
    out = np.empty((h, w))
    for i in range(h):
        a0 = ty0[i]
        a1 = ty1[i]
        for j in range(w):
            b0 = tx0[j]
            b1 = tx1[j]
            y = luma[i, j]
            v = bins[i, j]
            f00 = y if degenerate[a0, b0] else luts[a0, b0, v]
            f01 = y if degenerate[a0, b1] else luts[a0, b1, v]
            f10 = y if degenerate[a1, b0] else luts[a1, b0, v]
            f11 = y if degenerate[a1, b1] else luts[a1, b1, v]
            top = f00 * (1.0 - wx[j]) + f01 * wx[j]
            bot = f10 * (1.0 - wx[j]) + f11 * wx[j]
            out[i, j] = top * (1.0 - wy[i]) + bot * wy[i]
    return out


def clahe_luma_nb(luma, clip_limit, rows, cols, nbins=256):
    h, w = luma.shape
    bins = np.clip((luma * nbins).astype(np.int64), 0, nbins - 1)
    ey = _tile_edges(h, rows)
    ex = _tile_edges(w, cols)
    luts, degenerate = _clahe_luts_nb(bins, ey, ex, float(clip_limit), nbins)
    ty0, ty1, wy = _interp_table(h, ey)
    tx0, tx1, wx = _interp_table(w, ex)
    return _clahe_apply_nb(luma, bins, luts, degenerate, ty0, ty1, wy, tx0, tx1, wx)


if USE_NUMBA:
    window_score_map = window_score_map_nb
    local_max_mask = local_max_mask_nb
    resize_bilinear = resize_bilinear_nb
    clahe_luma = clahe_luma_nb
else:
    window_score_map = window_score_map_np
    local_max_mask = local_max_mask_np
    resize_bilinear = resize_bilinear_np
    clahe_luma = clahe_luma_np
