"""Single-level and coarse-to-fine (tSGM / tMGM) matching drivers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from sgmstereo import postproc
from sgmstereo.aggregate import AdaptivePenalties, PenaltySchedule, aggregate_all, canny_edges, wta
from sgmstereo.cost import census_cost, census_transform
from sgmstereo.imgio import downsample2, upsample2_nearest
from sgmstereo.postproc import RefineConfig, full_range, window_bounds
from sgmstereo.volume import SearchBounds

log = logging.getLogger(__name__)

ALGORITHMS = ("sgm8", "sgm16", "mgm8", "mgm16", "tsgm8", "tsgm16", "tmgm8", "tmgm16")

MIN_LEVEL_SIZE = 5


@dataclass(frozen=True)
class HierarchyConfig:
    s: int = 8
    eps: int = 4
    window: int = 7
    variant: str = "tsgm"
    n: int = 8

    def __post_init__(self):
        if self.s < 1 or self.s & (self.s - 1):
            raise ValueError(f"scale factor must be a power of two >= 1, got {self.s}")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.window < 1 or self.window % 2 != 1:
            raise ValueError("bound window must be a positive odd size")
        if self.variant not in ("tsgm", "tmgm"):
            raise ValueError(f"unknown hierarchical variant {self.variant!r}")
        if self.n not in (8, 16):
            raise ValueError("n must be 8 or 16")


def parse_algorithm(algo: str):
    """'tmgm16' -> (hierarchical=True, mgm=True, n=16)."""
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")
    hier = algo.startswith("t")
    core = algo[1:] if hier else algo
    return hier, core.startswith("mgm"), int(core[3:])


def init_bounds(d_min: int, d_max: int, s: int, eps: int, shape):
    """Constant coarsest-level bounds for the base and the match image."""
    if d_min > d_max:
        raise ValueError(f"d_min {d_min} exceeds d_max {d_max}")
    if s < 1:
        raise ValueError("scale must be >= 1")
    b_lo, b_hi = full_range(d_min, d_max, s, eps)
    m_lo, m_hi = full_range(-d_max, -d_min, s, eps)
    return SearchBounds.uniform(shape, b_lo, b_hi), SearchBounds.uniform(shape, m_lo, m_hi)


def propagate_bounds(disp: np.ndarray, d_min: int, d_max: int, s: int, eps: int,
                     window: int = 7) -> SearchBounds:
    """Per-pixel bounds from the window min/max of an upsampled, doubled coarser map.

    Valid pixels: ``[max(wmin - eps, floor(d_min/s) - eps), min(wmax + eps, ceil(d_max/s) + eps)]``.
    Invalid pixels search the whole range at this scale.
    """
    return window_bounds(disp, d_min, d_max, s, eps, window)


def _penalties_for(pen: PenaltySchedule, refine: Optional[RefineConfig]) -> PenaltySchedule:
    if refine is not None and refine.adaptive_penalties and pen.refine is None:
        return replace(pen, refine=AdaptivePenalties())
    return pen


def _one_side(img, other, census_img, census_other, bounds, n, mgm, pen, refine):
    edges = canny_edges(img)
    cost = census_cost(census_img, census_other, bounds)
    total = aggregate_all(cost, n, edges, pen, mgm, base_img=img, match_img=other)
    raw = wta(total)
    disp = raw
    if refine is not None and refine.subpixel:
        disp = postproc.subpixel(total, raw)
    if refine is not None and refine.bilateral is not None:
        disp = postproc.joint_bilateral(disp, img, *refine.bilateral)
    else:
        disp = postproc.median3(disp)
    return raw, disp


def match_level(base, match, bounds_b: SearchBounds, bounds_m: SearchBounds, n: int,
                mgm: bool, pen: PenaltySchedule, refine: Optional[RefineConfig] = None,
                scale: int = 1, trace: Optional[list] = None):
    """Match both directions at one resolution and apply the consistency check."""
    pen = _penalties_for(pen, refine)
    cb = census_transform(base)
    cm = census_transform(match)
    raw_b, db = _one_side(base, match, cb, cm, bounds_b, n, mgm, pen, refine)
    raw_m, dm = _one_side(match, base, cm, cb, bounds_m, n, mgm, pen, refine)
    out_b = postproc.lrrl(db, dm)
    out_m = postproc.lrrl(dm, db)
    if refine is not None and refine.peak_removal:
        region = refine.min_region_at(scale)
        out_b = postproc.peak_removal(out_b, region)
        out_m = postproc.peak_removal(out_m, region)
    if trace is not None:
        trace.append({
            "scale": scale,
            "shape": bounds_b.shape,
            "bounds_b": bounds_b,
            "bounds_m": bounds_m,
            "raw_b": raw_b,
            "raw_m": raw_m,
            "cells": bounds_b.cells + bounds_m.cells,
        })
    return out_b, out_m


def restrict_range(disp: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Keep a map inside the requested global range.

    The relaxed search can pick winners up to eps past the range; those become
    INVALID. Values within half a disparity of the range (sub-pixel or median
    overshoot) are clipped instead.
    """
    out = disp.astype(np.float32, copy=True)
    far = (out < lo - 0.5) | (out > hi + 0.5)
    out[far] = np.nan
    np.clip(out, lo, hi, out=out)
    return out


def _finish(d_b, d_m, d_min, d_max, refine):
    d_b = restrict_range(d_b, d_min, d_max)
    d_m = restrict_range(d_m, -d_max, -d_min)
    if refine is not None and refine.fill_holes:
        return postproc.fill_holes(d_b), postproc.fill_holes(d_m)
    return d_b, d_m


def _check_pair(base, match):
    base = np.asarray(base, dtype=np.float64)
    match = np.asarray(match, dtype=np.float64)
    if base.shape != match.shape:
        raise ValueError(f"image sizes differ: {base.shape} vs {match.shape}")
    return base, match


def run_flat(base, match, d_min: int, d_max: int, n: int = 8, mgm: bool = False,
             pen: PenaltySchedule = PenaltySchedule(), refine: Optional[RefineConfig] = None,
             trace: Optional[list] = None):
    """Plain SGM-N / MGM-N over the full range ``[d_min, d_max]``."""
    base, match = _check_pair(base, match)
    bounds_b, bounds_m = init_bounds(d_min, d_max, 1, 0, base.shape)
    d_b, d_m = match_level(base, match, bounds_b, bounds_m, n, mgm, pen, refine, 1, trace)
    return _finish(d_b, d_m, d_min, d_max, refine)


def run_hierarchical(base, match, d_min: int, d_max: int,
                     cfg: HierarchyConfig = HierarchyConfig(),
                     pen: PenaltySchedule = PenaltySchedule(),
                     refine: Optional[RefineConfig] = None, trace: Optional[list] = None):
    """Coarse-to-fine matching with per-pixel search bounds.

    Starts at scale ``cfg.s`` (images downsampled by s), then halves s each
    level, doubling disparities and re-deriving bounds until full resolution.
    Returns the full-resolution base and match maps.
    """
    base, match = _check_pair(base, match)
    if d_min > d_max:
        raise ValueError(f"d_min {d_min} exceeds d_max {d_max}")
    mgm = cfg.variant == "tmgm"
    pyr_b, pyr_m = [base], [match]
    s = 1
    while s < cfg.s:
        h, w = pyr_b[-1].shape
        if h < 2 or w < 2:
            break
        pyr_b.append(downsample2(pyr_b[-1]))
        pyr_m.append(downsample2(pyr_m[-1]))
        s *= 2
    level = len(pyr_b) - 1
    while level > 0 and min(pyr_b[level].shape) < MIN_LEVEL_SIZE:
        level -= 1
    s = 2 ** level
    if s != cfg.s:
        log.warning("images too small for scale %d; starting the hierarchy at scale %d", cfg.s, s)
    bounds_b, bounds_m = init_bounds(d_min, d_max, s, cfg.eps, pyr_b[level].shape)
    use_pct = refine is not None and refine.percentile_bounds
    while True:
        d_b, d_m = match_level(pyr_b[level], pyr_m[level], bounds_b, bounds_m, cfg.n, mgm,
                               pen, refine, s, trace)
        if s == 1:
            break
        s //= 2
        level -= 1
        shape = pyr_b[level].shape
        up_b = upsample2_nearest(2 * d_b, shape)
        up_m = upsample2_nearest(2 * d_m, shape)
        if use_pct:
            pct = (refine.percentile_window, refine.lo_pct, refine.hi_pct)
            bounds_b = postproc.percentile_bounds(up_b, d_min, d_max, s, cfg.eps, *pct)
            bounds_m = postproc.percentile_bounds(up_m, -d_max, -d_min, s, cfg.eps, *pct)
        else:
            bounds_b = propagate_bounds(up_b, d_min, d_max, s, cfg.eps, cfg.window)
            bounds_m = propagate_bounds(up_m, -d_max, -d_min, s, cfg.eps, cfg.window)
    return _finish(d_b, d_m, d_min, d_max, refine)


def match_pair(base, match, algo: str, d_min: int, d_max: int,
               pen: PenaltySchedule = PenaltySchedule(),
               hier: HierarchyConfig = HierarchyConfig(),
               refine: Optional[RefineConfig] = None, trace: Optional[list] = None):
    """Run any of the eight named variants; returns ``(D_b, D_m)``."""
    hierarchical, mgm, n = parse_algorithm(algo)
    if hierarchical:
        cfg = replace(hier, variant="tmgm" if mgm else "tsgm", n=n)
        return run_hierarchical(base, match, d_min, d_max, cfg, pen, refine, trace)
    return run_flat(base, match, d_min, d_max, n, mgm, pen, refine, trace)


__all__ = [
    "ALGORITHMS",
    "HierarchyConfig",
    "SearchBounds",
    "init_bounds",
    "match_level",
    "match_pair",
    "parse_algorithm",
    "propagate_bounds",
    "restrict_range",
    "run_flat",
    "run_hierarchical",
]
