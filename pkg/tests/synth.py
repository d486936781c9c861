"""Synthetic stereo pairs with known disparity."""

import numpy as np
from scipy.ndimage import gaussian_filter


def texture(shape, rng, sigma=1.0):
    t = gaussian_filter(rng.uniform(0, 255, size=shape), sigma)
    t -= t.min()
    return np.rint(255 * t / max(t.max(), 1e-9))


def slanted_pair(shape, d_lo, d_hi, rng, sigma=1.0):
    """Base image plus a match image warped so that base(x, y) = match(x + D(x, y), y).

    ``D`` is a smooth field in ``[d_lo, d_hi]`` made of a few tilted planes.
    """
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    f = 0.5 + 0.25 * np.sin(2 * np.pi * xx / w) + 0.25 * np.cos(2 * np.pi * yy / h)
    f = np.where(xx > w / 2, f, 1.0 - f * 0.5)
    disp = d_lo + (d_hi - d_lo) * f
    pad = int(np.ceil(max(abs(d_lo), abs(d_hi)))) + 2
    match_wide = texture((h, w + 2 * pad), rng, sigma)
    src = xx + disp + pad
    x0 = np.floor(src).astype(int)
    a = src - x0
    rows = np.arange(h)[:, None]
    base = (1 - a) * match_wide[rows, x0] + a * match_wide[rows, x0 + 1]
    match = match_wide[:, pad:pad + w]
    return np.rint(base), match, disp.astype(np.float32)
