"""5x5 census transform and Hamming-distance data cost."""

from __future__ import annotations

import numba as nb
import numpy as np

from sgmstereo.volume import CostVolume, SearchBounds

CENSUS_RADIUS = 2
CENSUS_BITS = 24
# cost assigned when the matching pixel falls outside the image
C_OOB = 24


def census_transform(img: np.ndarray) -> np.ndarray:
    """24-bit census descriptors over a 5x5 window with edge replication.

    Bit k is set when the k-th neighbour (row-major, centre skipped) is
    strictly darker than the centre.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("census_transform expects a 2-D gray image")
    h, w = img.shape
    if h < 5 or w < 5:
        raise ValueError(f"census needs at least 5x5 pixels, got {w}x{h}")
    r = CENSUS_RADIUS
    pad = np.pad(img, r, mode="edge")
    desc = np.zeros((h, w), dtype=np.uint32)
    bit = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nbr = pad[r + dy: r + dy + h, r + dx: r + dx + w]
            desc |= (nbr < img).astype(np.uint32) << np.uint32(bit)
            bit += 1
    return desc


@nb.njit(cache=True, inline="always")
def popcount32(v):
    v = v - ((v >> 1) & 0x55555555)
    v = (v & 0x33333333) + ((v >> 2) & 0x33333333)
    v = (v + (v >> 4)) & 0x0F0F0F0F
    return ((v * 0x01010101) & 0xFFFFFFFF) >> 24


@nb.njit(cache=True)
def _census_cost_kernel(desc_b, desc_m, tmin, tmax, offsets, out, oob):
    h, w = desc_b.shape
    for y in range(h):
        for x in range(w):
            i = y * w + x
            base = offsets[i]
            lo = tmin[y, x]
            db = np.int64(desc_b[y, x])
            for d in range(lo, tmax[y, x] + 1):
                xm = x + d
                if xm < 0 or xm >= w:
                    out[base + d - lo] = oob
                else:
                    out[base + d - lo] = popcount32(db ^ np.int64(desc_m[y, xm]))


def census_cost(base: np.ndarray, match: np.ndarray, bounds: SearchBounds) -> CostVolume:
    """Hamming distance between ``base(x, y)`` and ``match(x + d, y)`` for every d in bounds.

    Both arguments are census images. For the match-referenced volume call
    with the roles swapped and the negated disparity range.
    """
    if base.shape != match.shape:
        raise ValueError(f"census images differ in shape: {base.shape} vs {match.shape}")
    if bounds.shape != base.shape:
        raise ValueError(f"bounds shape {bounds.shape} does not match image {base.shape}")
    vol = CostVolume.zeros(bounds)
    _census_cost_kernel(
        np.ascontiguousarray(base, dtype=np.uint32),
        np.ascontiguousarray(match, dtype=np.uint32),
        bounds.tmin,
        bounds.tmax,
        vol.offsets,
        vol.data,
        np.float32(C_OOB),
    )
    return vol


def cost_volume(base_img: np.ndarray, match_img: np.ndarray, bounds: SearchBounds) -> CostVolume:
    """Convenience wrapper: census both gray images, then census_cost."""
    return census_cost(census_transform(base_img), census_transform(match_img), bounds)
