"""Consistency check, filtering and the optional refinement stack."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba as nb
import numpy as np

from sgmstereo.imgio import INVALID
from sgmstereo.volume import AggregateVolume, SearchBounds


@dataclass(frozen=True)
class RefineConfig:
    """Switches for the refinement stack. Everything is off by default.

    ``peak_min_region`` is the full-resolution component size; coarser levels
    use it divided by 4 per level. ``bilateral`` replaces the 3x3 median with a
    joint bilateral filter of the given (sigma_spatial, sigma_range).
    """

    subpixel: bool = False
    peak_removal: bool = False
    peak_min_region: int = 64
    bilateral: Optional[tuple] = None
    percentile_bounds: bool = False
    percentile_window: int = 41
    lo_pct: float = 5.0
    hi_pct: float = 95.0
    fill_holes: bool = False
    adaptive_penalties: bool = False

    def __post_init__(self):
        if not (0 < self.lo_pct < self.hi_pct < 100):
            raise ValueError("percentiles must satisfy 0 < lo < hi < 100")
        if self.percentile_window % 2 != 1:
            raise ValueError("percentile window must be odd")
        if self.bilateral is not None and len(self.bilateral) != 2:
            raise ValueError("bilateral expects (sigma_spatial, sigma_range)")

    @classmethod
    def full(cls) -> "RefineConfig":
        return cls(subpixel=True, peak_removal=True, bilateral=(4.0, 12.0),
                   percentile_bounds=True, fill_holes=True, adaptive_penalties=True)

    def min_region_at(self, scale: int) -> int:
        return max(1, self.peak_min_region // (scale * scale))


@nb.njit(cache=True)
def _lrrl_kernel(db, dm, out):
    h, w = db.shape
    for y in range(h):
        for x in range(w):
            d = db[y, x]
            out[y, x] = np.nan
            if not np.isfinite(d):
                continue
            xq = int(np.floor(x + d + 0.5))
            if xq < 0 or xq >= w:
                continue
            e = dm[y, xq]
            if not np.isfinite(e):
                continue
            # opposite-sign conventions: consistent pairs satisfy d ~ -e
            if abs(d + e) <= 1.0:
                out[y, x] = d


def lrrl(d_b: np.ndarray, d_m: np.ndarray) -> np.ndarray:
    """Keep D_b(p) only where the match map at ``p_x + D_b(p)`` points back within 1 px."""
    if d_b.shape != d_m.shape:
        raise ValueError("lrrl needs maps of equal shape")
    out = np.empty(d_b.shape, dtype=np.float32)
    _lrrl_kernel(np.asarray(d_b, np.float32), np.asarray(d_m, np.float32), out)
    return out


@nb.njit(cache=True, inline="always")
def _insert_sorted(buf, n, v):
    j = n
    while j > 0 and buf[j - 1] > v:
        buf[j] = buf[j - 1]
        j -= 1
    buf[j] = v


@nb.njit(cache=True, inline="always")
def _median_sorted(buf, n):
    if n % 2 == 1:
        return buf[n // 2]
    return 0.5 * (buf[n // 2 - 1] + buf[n // 2])


@nb.njit(cache=True)
def _median3_kernel(disp, out):
    h, w = disp.shape
    buf = np.empty(9, dtype=np.float32)
    for y in range(h):
        for x in range(w):
            v = disp[y, x]
            out[y, x] = v
            if not np.isfinite(v):
                continue
            n = 0
            for yy in range(max(0, y - 1), min(h, y + 2)):
                for xx in range(max(0, x - 1), min(w, x + 2)):
                    u = disp[yy, xx]
                    if np.isfinite(u):
                        _insert_sorted(buf, n, u)
                        n += 1
            out[y, x] = _median_sorted(buf, n)


def median3(disp: np.ndarray) -> np.ndarray:
    """3x3 median over valid neighbours; the valid/INVALID partition is unchanged.

    Even counts take the mean of the two middle values.
    """
    out = np.empty(disp.shape, dtype=np.float32)
    _median3_kernel(np.asarray(disp, np.float32), out)
    return out


@nb.njit(cache=True)
def _subpixel_kernel(data, offs, tmin, tmax, disp, out):
    h, w = disp.shape
    for y in range(h):
        for x in range(w):
            d = disp[y, x]
            out[y, x] = d
            if not np.isfinite(d):
                continue
            di = int(d)
            lo = tmin[y, x]
            if di - 1 < lo or di + 1 > tmax[y, x]:
                continue
            b = offs[y * w + x] + di - lo
            sm = np.float64(data[b - 1])
            s0 = np.float64(data[b])
            sp = np.float64(data[b + 1])
            den = sm - 2.0 * s0 + sp
            if den <= 0.0:
                continue
            off = (sm - sp) / (2.0 * den)
            if off > 0.5:
                off = 0.5
            elif off < -0.5:
                off = -0.5
            out[y, x] = d + off


def subpixel(volume: AggregateVolume, disp: np.ndarray) -> np.ndarray:
    """Parabola fit through S at d-1, d, d+1 around each integer winner."""
    b = volume.bounds
    if disp.shape != b.shape:
        raise ValueError("disparity map does not match the volume")
    out = np.empty(disp.shape, dtype=np.float32)
    _subpixel_kernel(volume.data, volume.offsets, b.tmin, b.tmax,
                     np.asarray(disp, np.float32), out)
    return out


@nb.njit(cache=True)
def _peak_kernel(disp, min_region, out):
    h, w = disp.shape
    label = np.full((h, w), -1, dtype=np.int64)
    stack = np.empty(h * w, dtype=np.int64)
    members = np.empty(h * w, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            out[y, x] = disp[y, x]
    cur = 0
    for y0 in range(h):
        for x0 in range(w):
            if label[y0, x0] >= 0 or not np.isfinite(disp[y0, x0]):
                continue
            top = 0
            n = 0
            stack[top] = y0 * w + x0
            top += 1
            label[y0, x0] = cur
            while top > 0:
                top -= 1
                idx = stack[top]
                members[n] = idx
                n += 1
                y = idx // w
                x = idx % w
                v = disp[y, x]
                for k in range(4):
                    yy = y
                    xx = x
                    if k == 0:
                        xx = x + 1
                    elif k == 1:
                        xx = x - 1
                    elif k == 2:
                        yy = y + 1
                    else:
                        yy = y - 1
                    if yy < 0 or yy >= h or xx < 0 or xx >= w:
                        continue
                    if label[yy, xx] >= 0:
                        continue
                    u = disp[yy, xx]
                    if np.isfinite(u) and abs(u - v) <= 1.0:
                        label[yy, xx] = cur
                        stack[top] = yy * w + xx
                        top += 1
            if n < min_region:
                for k in range(n):
                    idx = members[k]
                    out[idx // w, idx % w] = np.nan
            cur += 1


def peak_removal(disp: np.ndarray, min_region: int) -> np.ndarray:
    """Invalidate 4-connected segments (neighbours within 1 px) smaller than min_region."""
    out = np.empty(disp.shape, dtype=np.float32)
    _peak_kernel(np.asarray(disp, np.float32), int(min_region), out)
    return out


def joint_bilateral(disp: np.ndarray, guide: np.ndarray, sigma_spatial: float,
                    sigma_range: float) -> np.ndarray:
    """Edge-aware smoothing of valid disparities, with range weights from the guide image.

    Neighbours are taken within a Euclidean distance of 3 sigma_spatial; INVALID
    pixels neither contribute nor change.
    """
    disp = np.asarray(disp, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    if disp.shape != guide.shape:
        raise ValueError("disparity and guide image differ in shape")
    if not (sigma_spatial > 0 and sigma_range > 0):
        raise ValueError("bilateral sigmas must be positive")
    h, w = disp.shape
    reach = 3.0 * sigma_spatial
    rad = int(np.floor(reach))
    valid = np.isfinite(disp)
    vals = np.where(valid, disp, 0.0)
    pv = np.pad(vals, rad)
    pm = np.pad(valid.astype(np.float64), rad)
    pg = np.pad(guide, rad, mode="edge")
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    inv_s = 1.0 / (2.0 * sigma_spatial ** 2)
    inv_r = 0.0 if np.isinf(sigma_range) else 1.0 / (2.0 * sigma_range ** 2)
    for dy in range(-rad, rad + 1):
        for dx in range(-rad, rad + 1):
            if dx * dx + dy * dy > reach * reach:
                continue
            ws = np.exp(-(dx * dx + dy * dy) * inv_s)
            sl = (slice(rad + dy, rad + dy + h), slice(rad + dx, rad + dx + w))
            wr = np.exp(-((pg[sl] - guide) ** 2) * inv_r) if inv_r else 1.0
            wt = ws * wr * pm[sl]
            num += wt * pv[sl]
            den += wt
    out = np.full((h, w), np.nan, dtype=np.float32)
    out[valid] = (num[valid] / den[valid]).astype(np.float32)
    return out


@nb.njit(cache=True)
def _percentile_sorted(s, n, q):
    # linear interpolation between closest ranks
    pos = q / 100.0 * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    f = pos - lo
    return s[lo] + (s[hi] - s[lo]) * f


@nb.njit(cache=True)
def _window_bounds_kernel(disp, rad, use_pct, lo_q, hi_q, full_lo, full_hi, eps, tmin, tmax):
    h, w = disp.shape
    buf = np.empty((2 * rad + 1) * (2 * rad + 1), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            tmin[y, x] = full_lo
            tmax[y, x] = full_hi
            if not np.isfinite(disp[y, x]):
                continue
            n = 0
            wmin = np.inf
            wmax = -np.inf
            for yy in range(max(0, y - rad), min(h, y + rad + 1)):
                for xx in range(max(0, x - rad), min(w, x + rad + 1)):
                    u = disp[yy, xx]
                    if np.isfinite(u):
                        if use_pct:
                            buf[n] = u
                        n += 1
                        if u < wmin:
                            wmin = u
                        if u > wmax:
                            wmax = u
            if n == 0:
                continue
            if use_pct:
                s = np.sort(buf[:n])
                wmin = _percentile_sorted(s, n, lo_q)
                wmax = _percentile_sorted(s, n, hi_q)
            a = max(int(np.floor(wmin)) - eps, full_lo)
            b = min(int(np.ceil(wmax)) + eps, full_hi)
            if b < a:
                b = a
            tmin[y, x] = a
            tmax[y, x] = b


def full_range(d_min: int, d_max: int, s: int, eps: int):
    return int(np.floor(d_min / s)) - eps, int(np.ceil(d_max / s)) + eps


def window_bounds(disp, d_min, d_max, s, eps, window, percentiles=None) -> SearchBounds:
    lo_full, hi_full = full_range(d_min, d_max, s, eps)
    disp = np.ascontiguousarray(disp, dtype=np.float32)
    tmin = np.empty(disp.shape, np.int32)
    tmax = np.empty(disp.shape, np.int32)
    use_pct = percentiles is not None
    lo_q, hi_q = percentiles if use_pct else (0.0, 100.0)
    _window_bounds_kernel(disp, window // 2, use_pct, float(lo_q), float(hi_q),
                          lo_full, hi_full, int(eps), tmin, tmax)
    return SearchBounds(tmin, tmax)


def percentile_bounds(disp: np.ndarray, d_min: int, d_max: int, s: int, eps: int,
                      window: int = 41, lo: float = 5.0, hi: float = 95.0) -> SearchBounds:
    """Search bounds from the lo/hi percentiles of valid disparities in a window.

    Invalid pixels get the full range at this scale.
    """
    if window % 2 != 1:
        raise ValueError("percentile window must be odd")
    return window_bounds(disp, d_min, d_max, s, eps, window, (lo, hi))


@nb.njit(cache=True)
def _fill_kernel(disp, out):
    h, w = disp.shape
    dys = (0, 0, 1, -1, 1, 1, -1, -1)
    dxs = (1, -1, 0, 0, 1, -1, 1, -1)
    cand = np.empty(8, dtype=np.float32)
    for y in range(h):
        for x in range(w):
            out[y, x] = disp[y, x]
            if np.isfinite(disp[y, x]):
                continue
            n = 0
            for k in range(8):
                yy = y + dys[k]
                xx = x + dxs[k]
                while 0 <= yy < h and 0 <= xx < w:
                    if np.isfinite(disp[yy, xx]):
                        _insert_sorted(cand, n, disp[yy, xx])
                        n += 1
                        break
                    yy += dys[k]
                    xx += dxs[k]
            if n > 0:
                out[y, x] = _median_sorted(cand, n)


def fill_holes(disp: np.ndarray) -> np.ndarray:
    """Fill each INVALID pixel with the median of the nearest valid values along 8 directions."""
    out = np.empty(disp.shape, dtype=np.float32)
    _fill_kernel(np.asarray(disp, np.float32), out)
    return out


__all__ = [
    "INVALID",
    "RefineConfig",
    "fill_holes",
    "joint_bilateral",
    "lrrl",
    "median3",
    "peak_removal",
    "percentile_bounds",
    "subpixel",
]
