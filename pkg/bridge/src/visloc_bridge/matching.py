"""Classical dense matcher: phase-correlation prior + windowed local NCC.

A self-contained stand-in for neural dense matchers so the export pipeline
runs without downloaded weights.  Matching is translation-only per cell: a
global shift comes from phase correlation, then every grid cell searches a
small window around it by normalized cross-correlation over a square patch;
the NCC score (clipped to [0, 1]) becomes the match confidence.

Deterministic: identical images and parameters give identical fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MatchParams", "dense_match"]


@dataclass(frozen=True)
class MatchParams:
    patch: int = 9  # odd NCC patch side
    window: int = 6  # local search radius (px) around the global shift
    min_confidence: float = 0.0  # scores below this are zeroed
    # score volumes bigger than this many float32 entries skip subpixel fitting
    max_volume: int = 24_000_000


def _phase_shift(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    """Integer translation (dy, dx) aligning b to a, by phase correlation."""
    fa = np.fft.rfft2(a)
    fb = np.fft.rfft2(b)
    cross = fa * np.conj(fb)
    denom = np.abs(cross)
    cross = np.where(denom > 1e-12, cross / np.where(denom > 0, denom, 1.0), 0.0)
    corr = np.fft.irfft2(cross, s=a.shape)
    peak = np.unravel_index(int(np.argmax(corr)), corr.shape)
    dy = peak[0] if peak[0] <= a.shape[0] // 2 else peak[0] - a.shape[0]
    dx = peak[1] if peak[1] <= a.shape[1] // 2 else peak[1] - a.shape[1]
    # convention: source pixel p matches target pixel p + (dx, dy)
    return -dy, -dx


def _box_sum(img: np.ndarray, radius: int) -> np.ndarray:
    """Sliding-window sum with zero padding outside the image."""
    h, w = img.shape
    pad = np.zeros((h + 2 * radius + 1, w + 2 * radius + 1))
    pad[radius + 1:radius + 1 + h, radius + 1:radius + 1 + w] = img
    c = pad.cumsum(axis=0).cumsum(axis=1)
    size = 2 * radius + 1
    return (
        c[size:, size:] - c[:-size, size:] - c[size:, :-size] + c[:-size, :-size]
    )


def _shifted(img: np.ndarray, dy: int, dx: int) -> tuple[np.ndarray, np.ndarray]:
    """img translated so out[y, x] = img[y + dy, x + dx]; plus validity."""
    h, w = img.shape
    out = np.zeros_like(img)
    valid = np.zeros(img.shape, dtype=bool)
    ys0, ys1 = max(0, -dy), min(h, h - dy)
    xs0, xs1 = max(0, -dx), min(w, w - dx)
    if ys1 > ys0 and xs1 > xs0:
        out[ys0:ys1, xs0:xs1] = img[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
        valid[ys0:ys1, xs0:xs1] = True
    return out, valid


def dense_match(
    source: np.ndarray, target: np.ndarray, params: MatchParams = MatchParams()
) -> tuple[np.ndarray, np.ndarray]:
    """Match every source pixel into the target image.

    Both images are 2-D float grayscale of equal shape.  Returns (targets
    (H, W, 2) with x/y positions in continuous pixel coordinates, confidence
    (H, W) in [0, 1]); unmatched cells have confidence 0 and NaN targets.
    """
    a = np.asarray(source, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"image shapes disagree: {a.shape} vs {b.shape}")
    h, w = a.shape
    r = params.patch // 2
    gy, gx = _phase_shift(a, b)

    n_box = _box_sum(np.ones_like(a), r)
    sum_a = _box_sum(a, r)
    sum_a2 = _box_sum(a * a, r)
    var_a = sum_a2 - sum_a * sum_a / n_box

    side = 2 * params.window + 1
    keep_volume = h * w * side * side <= params.max_volume
    scores = np.full((side, side, h, w), -np.inf, dtype=np.float32) if keep_volume else None

    best = np.full((h, w), -np.inf)
    best_dy = np.zeros((h, w), dtype=np.int64)
    best_dx = np.zeros((h, w), dtype=np.int64)
    for iy, dy in enumerate(range(-params.window, params.window + 1)):
        for ix, dx in enumerate(range(-params.window, params.window + 1)):
            bs, valid = _shifted(b, gy + dy, gx + dx)
            sum_b = _box_sum(bs, r)
            sum_b2 = _box_sum(bs * bs, r)
            sum_ab = _box_sum(a * bs, r)
            cov = sum_ab - sum_a * sum_b / n_box
            var_b = sum_b2 - sum_b * sum_b / n_box
            denom = np.sqrt(np.maximum(var_a * var_b, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                ncc = np.where(denom > 1e-9, cov / np.where(denom > 0, denom, 1.0), -1.0)
            ncc = np.where(valid, ncc, -np.inf)
            if keep_volume:
                scores[iy, ix] = ncc
            better = ncc > best  # strict: ties keep the earlier (smaller) shift
            best = np.where(better, ncc, best)
            best_dy = np.where(better, dy, best_dy)
            best_dx = np.where(better, dx, best_dx)

    conf = np.clip(best, 0.0, 1.0)
    conf[~np.isfinite(best)] = 0.0
    conf[conf < params.min_confidence] = 0.0

    off_y = best_dy.astype(np.float64)
    off_x = best_dx.astype(np.float64)
    if keep_volume:
        off_y += _parabolic_offset(scores, best_dy, best_dx, params.window, axis=0)
        off_x += _parabolic_offset(scores, best_dy, best_dx, params.window, axis=1)

    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    tx = cols + 0.5 + gx + off_x
    ty = rows + 0.5 + gy + off_y
    inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    conf = np.where(inside, conf, 0.0)
    targets = np.stack([tx, ty], axis=-1)
    targets[conf == 0] = np.nan
    return targets, conf


def _parabolic_offset(scores, best_dy, best_dx, window, axis):
    """Subpixel peak offset from a 3-point parabola along one shift axis."""
    h, w = best_dy.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    iy = best_dy + window
    ix = best_dx + window
    side = 2 * window + 1
    if axis == 0:
        lo = np.clip(iy - 1, 0, side - 1)
        hi = np.clip(iy + 1, 0, side - 1)
        s_m = scores[lo, ix, rows, cols]
        s_0 = scores[iy, ix, rows, cols]
        s_p = scores[hi, ix, rows, cols]
        interior = (iy > 0) & (iy < side - 1)
    else:
        lo = np.clip(ix - 1, 0, side - 1)
        hi = np.clip(ix + 1, 0, side - 1)
        s_m = scores[iy, lo, rows, cols]
        s_0 = scores[iy, ix, rows, cols]
        s_p = scores[iy, hi, rows, cols]
        interior = (ix > 0) & (ix < side - 1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        denom = s_m - 2.0 * s_0 + s_p
        ok = interior & np.isfinite(s_m) & np.isfinite(s_p) & (denom < -1e-12)
        off = 0.5 * (s_m - s_p) / denom
    return np.where(ok, np.clip(off, -0.5, 0.5), 0.0)
