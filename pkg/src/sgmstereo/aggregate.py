"""Directional cost aggregation (SGM and MGM), path-sum correction and WTA."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np
from skimage.feature import canny

from sgmstereo.imgio import INVALID
from sgmstereo.volume import AggregateVolume, CostVolume, SearchBounds, Volume

_U = np.uint64

DIRECTIONS_8 = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))
DIRECTIONS_16 = DIRECTIONS_8 + (
    (2, 1), (-2, -1), (2, -1), (-2, 1), (1, 2), (-1, -2), (1, -2), (-1, 2),
)

CANNY_SIGMA = 1.4
CANNY_LOW = 20.0
CANNY_HIGH = 40.0


def perpendicular(r):
    """Rotate a step vector by +90 degrees: (a, b) -> (-b, a)."""
    return (-r[1], r[0])


@dataclass(frozen=True)
class DirectionSet:
    directions: tuple
    perpendiculars: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "perpendiculars", tuple(perpendicular(r) for r in self.directions))

    @classmethod
    def of(cls, n: int) -> "DirectionSet":
        if n == 8:
            return cls(DIRECTIONS_8)
        if n == 16:
            return cls(DIRECTIONS_16)
        raise ValueError(f"direction count must be 8 or 16, got {n}")

    def __len__(self):
        return len(self.directions)


@dataclass(frozen=True)
class AdaptivePenalties:
    """Intensity-driven penalty scaling parameters."""

    tau: float = 20.0
    q1: float = 3.0
    q2: float = 6.0
    v: float = 1.25

    def __post_init__(self):
        if not (self.q2 > self.q1 > 1):
            raise ValueError("adaptive penalties require q2 > q1 > 1")


@dataclass(frozen=True)
class PenaltySchedule:
    p1: float = 24.0
    p2_edge: float = 27.0
    p2_flat: float = 96.0
    refine: Optional[AdaptivePenalties] = None

    def __post_init__(self):
        if min(self.p1, self.p2_edge, self.p2_flat) < 0:
            raise ValueError("penalties must be non-negative")
        # equality is tolerated so that degenerate (all-zero) schedules stay expressible
        if not (self.p1 <= self.p2_edge <= self.p2_flat):
            raise ValueError("penalties must satisfy p1 <= p2_edge <= p2_flat")


def direction_class(r) -> str:
    if r[1] == 0:
        return "horizontal"
    if r[0] == 0:
        return "vertical"
    return "diagonal"


def _p1_factor(r, v: float) -> float:
    cls = direction_class(r)
    if cls == "vertical":
        return 1.0 / v
    if cls == "diagonal":
        return math.sqrt(1.0 + v * v) / v
    return 1.0


def adaptive_penalties(d1: float, d2: float, dir_class: str, base: PenaltySchedule):
    """Scaled (P1, P2) for intensity differences d1 (base) and d2 (match) along a path.

    The unscaled P2 is ``base.p2_flat``; ties at exactly tau count as small differences.
    """
    ap = base.refine
    if ap is None:
        raise ValueError("penalty schedule has no adaptive parameters")
    p1, p2 = base.p1, base.p2_flat
    if d1 <= ap.tau and d2 <= ap.tau:
        pass
    elif d1 > ap.tau and d2 > ap.tau:
        p1, p2 = p1 / ap.q2, p2 / ap.q2
    else:
        p1, p2 = p1 / ap.q1, p2 / ap.q1
    if dir_class == "vertical":
        p1 = p1 / ap.v
    elif dir_class == "diagonal":
        p1 = p1 * math.sqrt(1.0 + ap.v ** 2) / ap.v
    elif dir_class != "horizontal":
        raise ValueError(f"unknown direction class {dir_class!r}")
    return p1, p2


def canny_edges(img: np.ndarray, sigma: float = CANNY_SIGMA,
                low: float = CANNY_LOW, high: float = CANNY_HIGH) -> np.ndarray:
    """Binary Canny edge map (Gaussian, Sobel, non-max suppression, hysteresis)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError("canny_edges needs a 2-D image of at least 3x3 pixels")
    return canny(img, sigma=sigma, low_threshold=low, high_threshold=high)


def scan_order(preds):
    """(outer_is_y, outer_reversed, inner_reversed) visiting every ``p - x`` before ``p``.

    Candidates are tried row-major first so most directions keep memory locality.
    """
    for outer_y in (True, False):
        for outer_rev in (False, True):
            for inner_rev in (False, True):
                ok = True
                for dx, dy in preds:
                    # offset of the predecessor relative to p
                    ox, oy = -dx, -dy
                    o, i = (oy, ox) if outer_y else (ox, oy)
                    so = 1 if outer_rev else -1
                    si = 1 if inner_rev else -1
                    if o * so > 0 or (o == 0 and i * si > 0):
                        continue
                    ok = False
                    break
                if ok:
                    return outer_y, outer_rev, inner_rev
    raise ValueError(f"no raster order satisfies predecessors {preds}")


@nb.njit(cache=True)
def _aggregate_kernel(cost, offs, tmin, tmax, preds, weight, outer_y, outer_rev, inner_rev,
                      p1, p2map, adaptive, img_b, img_m, tau, q1, q2, p1fac, p2_base,
                      rescale, L, Lmin, S, accumulate):
    h, w = tmin.shape
    npred = preds.shape[0]
    n_outer = h if outer_y else w
    n_inner = w if outer_y else h
    maxw = 1
    for y in range(h):
        for x in range(w):
            maxw = max(maxw, tmax[y, x] - tmin[y, x] + 1)
    inf = np.float32(np.inf)
    zero = np.float32(0.0)
    # tmp[t] holds the predecessor value at disparity lo - 1 + t
    tmp = np.empty(maxw + 2, dtype=np.float32)
    acc = np.empty(maxw, dtype=np.float32)
    p1v = np.empty(maxw, dtype=np.float32)
    p2v = np.empty(maxw, dtype=np.float32)
    for oo in range(n_outer):
        o = n_outer - 1 - oo if outer_rev else oo
        for ii in range(n_inner):
            it = n_inner - 1 - ii if inner_rev else ii
            if outer_y:
                y = o
                x = it
            else:
                x = o
                y = it
            i = y * w + x
            lo = np.int64(tmin[y, x])
            n = np.int64(tmax[y, x]) - lo + 1
            first = True
            for k in range(npred):
                px = x - preds[k, 0]
                py = y - preds[k, 1]
                if px < 0 or px >= w or py < 0 or py >= h:
                    continue
                j = py * w + px
                a = np.int64(tmin[py, px])
                z = np.int64(tmax[py, px])
                # overlap of the predecessor interval with [lo - 1, hi + 1], as tmp indices
                t0 = min(max(a - lo + 1, 0), n + 2)
                t1 = max(min(z - lo + 2, n + 2), t0)
                for t in range(t0):
                    tmp[t] = inf
                qb = offs[j] + lo - 1 - a
                for t in range(t0, t1):
                    tmp[t] = L[qb + t]
                for t in range(t1, n + 2):
                    tmp[t] = inf
                m = Lmin[j]
                sub = m if rescale else zero
                if adaptive:
                    d1 = abs(img_b[y, x] - img_b[py, px])
                    for t in range(n):
                        d = lo + t
                        xm = x + d
                        xq = px + d
                        d2 = 0.0
                        if xm >= 0 and xm < w and xq >= 0 and xq < w:
                            d2 = abs(img_m[y, xm] - img_m[py, xq])
                        if d1 <= tau and d2 <= tau:
                            f = 1.0
                        elif d1 > tau and d2 > tau:
                            f = 1.0 / q2
                        else:
                            f = 1.0 / q1
                        p1v[t] = p1 * f * p1fac[k]
                        p2v[t] = p2_base * f
                    for t in range(n):
                        b = m + p2v[t]
                        v = tmp[t + 1]
                        b = v if v < b else b
                        v = tmp[t] + p1v[t]
                        b = v if v < b else b
                        v = tmp[t + 2] + p1v[t]
                        b = v if v < b else b
                        if first:
                            acc[t] = b - sub
                        else:
                            acc[t] += b - sub
                else:
                    c2 = m + p2map[y, x]
                    if first:
                        for t in range(n):
                            u = tmp[t]
                            v = tmp[t + 2]
                            u = (u if u < v else v) + p1
                            v = tmp[t + 1]
                            u = u if u < v else v
                            acc[t] = (u if u < c2 else c2) - sub
                    else:
                        for t in range(n):
                            u = tmp[t]
                            v = tmp[t + 2]
                            u = (u if u < v else v) + p1
                            v = tmp[t + 1]
                            u = u if u < v else v
                            acc[t] += (u if u < c2 else c2) - sub
                first = False
            base = offs[i]
            best = inf
            if first:
                for t in range(n):
                    v = cost[base + t]
                    L[base + t] = v
                    best = v if v < best else best
            else:
                for t in range(n):
                    v = cost[base + t] + weight * acc[t]
                    L[base + t] = v
                    best = v if v < best else best
            if accumulate:
                for t in range(n):
                    S[base + t] += L[base + t]
            Lmin[i] = best


def _check_direction(r):
    if tuple(r) == (0, 0):
        raise ValueError("direction (0, 0) is not a valid path step")


def _run_direction(cost: CostVolume, steps, weight, edges, pen: PenaltySchedule,
                   rescale=True, base_img=None, match_img=None, out_sum=None,
                   scratch=None) -> Volume:
    bounds = cost.bounds
    h, w = bounds.shape
    preds = np.asarray(steps, dtype=np.int64).reshape(-1, 2)
    outer_y, outer_rev, inner_rev = scan_order([tuple(p) for p in preds])
    if edges is None:
        edges = np.zeros((h, w), dtype=bool)
    if edges.shape != (h, w):
        raise ValueError("edge map shape does not match the cost volume")
    adaptive = pen.refine is not None
    if adaptive:
        if base_img is None or match_img is None:
            raise ValueError("adaptive penalties need the base and match images")
        ap = pen.refine
        p2map = np.full((h, w), pen.p2_flat, dtype=np.float32)
        p1fac = np.array([_p1_factor(tuple(p), ap.v) for p in preds], dtype=np.float64)
        tau, q1, q2 = ap.tau, ap.q1, ap.q2
        img_b = np.ascontiguousarray(base_img, dtype=np.float64)
        img_m = np.ascontiguousarray(match_img, dtype=np.float64)
    else:
        p2map = np.where(edges, pen.p2_edge, pen.p2_flat).astype(np.float32)
        p1fac = np.ones(len(preds))
        tau = q1 = q2 = 1.0
        img_b = img_m = np.zeros((1, 1))
    if scratch is None:
        L = Volume(bounds, np.empty_like(cost.data), cost.offsets)
        Lmin = np.empty(h * w, dtype=np.float32)
    else:
        L, Lmin = scratch
    accumulate = out_sum is not None
    S = out_sum.data if accumulate else np.zeros(0, dtype=np.float32)
    _aggregate_kernel(
        cost.data, cost.offsets, bounds.tmin, bounds.tmax, preds, np.float32(weight),
        outer_y, outer_rev, inner_rev, np.float32(pen.p1), p2map, adaptive, img_b, img_m,
        float(tau), float(q1), float(q2), p1fac, np.float32(pen.p2_flat),
        rescale, L.data, Lmin, S, accumulate,
    )
    return L


def _compatible_orders(preds):
    out = []
    for outer_y in (True, False):
        for outer_rev in (False, True):
            for inner_rev in (False, True):
                ok = True
                for dx, dy in preds:
                    o, i = (-dy, -dx) if outer_y else (-dx, -dy)
                    so = 1 if outer_rev else -1
                    si = 1 if inner_rev else -1
                    if not (o * so > 0 or (o == 0 and i * si > 0)):
                        ok = False
                        break
                if ok:
                    out.append((outer_y, outer_rev, inner_rev))
    return out


def plan_passes(step_sets, columns_cheap: bool = True):
    """Group directions into the fewest raster passes.

    ``step_sets`` holds, per direction, the predecessor steps of its recurrence.
    With ``columns_cheap`` every order competes on equal terms (ties favour
    row-major); otherwise column-major passes only take directions that have no
    row-major order. Returns ``[(order, [indices]), ...]`` with row passes first.
    """
    compat = [set(_compatible_orders(s)) for s in step_sets]
    for k, c in enumerate(compat):
        if not c:
            raise ValueError(f"no raster order satisfies predecessors {step_sets[k]}")
    orders = [(oy, orv, irv) for oy in (True, False) for orv in (False, True)
              for irv in (False, True)]
    stages = [orders] if columns_cheap else [orders[:4], orders[4:]]
    passes = []
    left = set(range(len(step_sets)))
    for candidates in stages:
        pool = [k for k in left if compat[k] & set(candidates)]
        if not pool:
            continue
        # exhaustive minimum cover; there are at most eight orders
        cover = min(
            (c for r in range(1, len(candidates) + 1)
             for c in itertools.combinations(candidates, r)
             if all(compat[k] & set(c) for k in pool)),
            key=lambda c: (len(c), sum(not o[0] for o in c)),
        )
        for order in cover:
            members = sorted(k for k in pool if order in compat[k])
            pool = [k for k in pool if k not in members]
            left -= set(members)
            if members:
                passes.append((order, members))
    return passes


@nb.njit(cache=True)
def _pass_kernel(cost, offs, tmin, tmax, loc, line_len, preds, npred, weights,
                 outer_y, outer_rev, inner_rev, p1, p2map, adaptive, img_b, img_m,
                 tau, q1, q2, p1fac, p2_base, rescale, S, init, cscale):
    # Runs several directions sharing one raster order. Only the last few scan
    # lines of each L_r are kept, in ring buffers indexed by line parity.
    h, w = tmin.shape
    nd = preds.shape[0]
    n_outer = h if outer_y else w
    n_inner = w if outer_y else h
    depth = 1
    for dd in range(nd):
        for k in range(npred[dd]):
            o = preds[dd, k, 1] if outer_y else preds[dd, k, 0]
            depth = max(depth, abs(o) + 1)
    maxw = 1
    for y in range(h):
        for x in range(w):
            maxw = max(maxw, tmax[y, x] - tmin[y, x] + 1)
    inf = np.float32(np.inf)
    zero = np.float32(0.0)
    lbuf = np.empty((nd, depth, line_len), dtype=np.float32)
    mbuf = np.empty((nd, depth, n_inner), dtype=np.float32)
    tmp = np.empty(maxw + 2, dtype=np.float32)
    acc = np.empty(maxw, dtype=np.float32)
    tot = np.empty(maxw, dtype=np.float32)
    p1v = np.empty(maxw, dtype=np.float32)
    p2v = np.empty(maxw, dtype=np.float32)
    for oo in range(n_outer):
        o = n_outer - 1 - oo if outer_rev else oo
        slot = o % depth
        for ii in range(n_inner):
            it = n_inner - 1 - ii if inner_rev else ii
            if outer_y:
                y = o
                x = it
            else:
                x = o
                y = it
            i = y * w + x
            lo = np.int64(tmin[y, x])
            n = np.int64(tmax[y, x]) - lo + 1
            base = offs[i]
            cl = loc[y, x]
            for t in range(n):
                tot[t] = zero
            for dd in range(nd):
                first = True
                wt = weights[dd]
                for k in range(npred[dd]):
                    px = x - preds[dd, k, 0]
                    py = y - preds[dd, k, 1]
                    if px < 0 or px >= w or py < 0 or py >= h:
                        continue
                    ps = (py if outer_y else px) % depth
                    pi = px if outer_y else py
                    a = np.int64(tmin[py, px])
                    z = np.int64(tmax[py, px])
                    t0 = min(max(a - lo + 1, 0), n + 2)
                    t1 = max(min(z - lo + 2, n + 2), t0)
                    for t in range(t0):
                        tmp[t] = inf
                    qb = loc[py, px] + lo - 1 - a
                    for t in range(t0, t1):
                        tmp[t] = lbuf[dd, ps, qb + t]
                    for t in range(t1, n + 2):
                        tmp[t] = inf
                    m = mbuf[dd, ps, pi]
                    sub = m if rescale else zero
                    if adaptive:
                        d1 = abs(img_b[y, x] - img_b[py, px])
                        for t in range(n):
                            d = lo + t
                            xm = x + d
                            xq = px + d
                            d2 = 0.0
                            if xm >= 0 and xm < w and xq >= 0 and xq < w:
                                d2 = abs(img_m[y, xm] - img_m[py, xq])
                            if d1 <= tau and d2 <= tau:
                                f = 1.0
                            elif d1 > tau and d2 > tau:
                                f = 1.0 / q2
                            else:
                                f = 1.0 / q1
                            p1v[t] = p1 * f * p1fac[dd, k]
                            p2v[t] = p2_base * f
                        for t in range(n):
                            b = m + p2v[t]
                            v = tmp[t + 1]
                            b = v if v < b else b
                            v = tmp[t] + p1v[t]
                            b = v if v < b else b
                            v = tmp[t + 2] + p1v[t]
                            b = v if v < b else b
                            if first:
                                acc[t] = b - sub
                            else:
                                acc[t] += b - sub
                    else:
                        c2 = m + p2map[y, x]
                        if first:
                            for t in range(n):
                                u = tmp[t]
                                v = tmp[t + 2]
                                u = (u if u < v else v) + p1
                                v = tmp[t + 1]
                                u = u if u < v else v
                                acc[t] = (u if u < c2 else c2) - sub
                        else:
                            for t in range(n):
                                u = tmp[t]
                                v = tmp[t + 2]
                                u = (u if u < v else v) + p1
                                v = tmp[t + 1]
                                u = u if u < v else v
                                acc[t] += (u if u < c2 else c2) - sub
                    first = False
                best = inf
                if first:
                    for t in range(n):
                        v = cost[base + t]
                        lbuf[dd, slot, cl + t] = v
                        tot[t] += v
                        best = v if v < best else best
                else:
                    for t in range(n):
                        v = cost[base + t] + wt * acc[t]
                        lbuf[dd, slot, cl + t] = v
                        tot[t] += v
                        best = v if v < best else best
                mbuf[dd, slot, it] = best
            if init:
                for t in range(n):
                    S[base + t] = tot[t] - cscale * cost[base + t]
            else:
                for t in range(n):
                    S[base + t] += tot[t]


@nb.njit(cache=True)
def _pass_kernel_fixed(cost, offs, tmin, tmax, loc, line_len, preds, npred, weights,
                       outer_y, outer_rev, inner_rev, p1, p2map, rescale, S, init, cscale):
    # Fixed-P1 variant. Each finished L_r(q) is immediately folded into
    # h(q, d) = min(L(d), L(d - 1) + P1, L(d + 1) + P1) on [lo - 1, hi + 1], so a
    # successor only needs min(h, min L + P2). Two successors (MGM) share h.
    # Hot loops run over unsigned counters so numba skips negative-index wrapping.
    h, w = tmin.shape
    nd = preds.shape[0]
    n_outer = h if outer_y else w
    n_inner = w if outer_y else h
    depth = 1
    for dd in range(nd):
        for k in range(npred[dd]):
            o = preds[dd, k, 1] if outer_y else preds[dd, k, 0]
            depth = max(depth, abs(o) + 1)
    maxw = 1
    for y in range(h):
        for x in range(w):
            maxw = max(maxw, tmax[y, x] - tmin[y, x] + 1)
    inf = np.float32(np.inf)
    zero = np.float32(0.0)
    # one h line per (direction, ring slot); two extra entries per pixel
    hlen = line_len + 2 * n_inner
    hbuf = np.empty(nd * depth * hlen, dtype=np.float32)
    mbuf = np.empty(nd * depth * n_inner, dtype=np.float32)
    tmin_f = tmin.ravel()
    tmax_f = tmax.ravel()
    loc_f = loc.ravel()
    # flat index delta and inner-axis offset of each predecessor
    pdel = np.zeros((nd, 2), dtype=np.int64)
    pin = np.zeros((nd, 2), dtype=np.int64)
    for dd in range(nd):
        for k in range(npred[dd]):
            pdel[dd, k] = preds[dd, k, 1] * w + preds[dd, k, 0]
            pin[dd, k] = preds[dd, k, 0] if outer_y else preds[dd, k, 1]
    # per outer line: predecessor line present, and its h / min-L bases
    pline = np.zeros((nd, 2), dtype=np.bool_)
    hb0 = np.zeros((nd, 2), dtype=np.int64)
    mb0 = np.zeros((nd, 2), dtype=np.int64)
    ext = np.empty(maxw + 4, dtype=np.float32)
    acc = np.empty(maxw, dtype=np.float32)
    tot = np.empty(maxw, dtype=np.float32)
    qh = np.empty(2, dtype=np.uint64)
    qc = np.empty(2, dtype=np.float32)
    qs = np.empty(2, dtype=np.float32)
    qt0 = np.empty(2, dtype=np.int64)
    qt1 = np.empty(2, dtype=np.int64)
    ext[0] = inf
    ext[1] = inf
    one = _U(1)
    two = _U(2)
    for oo in range(n_outer):
        o = n_outer - 1 - oo if outer_rev else oo
        slot = o % depth
        for dd in range(nd):
            for k in range(npred[dd]):
                po = o - (preds[dd, k, 1] if outer_y else preds[dd, k, 0])
                pline[dd, k] = po >= 0 and po < n_outer
                ps = po % depth if pline[dd, k] else 0
                hb0[dd, k] = (dd * depth + ps) * hlen
                mb0[dd, k] = (dd * depth + ps) * n_inner
        for ii in range(n_inner):
            it = n_inner - 1 - ii if inner_rev else ii
            if outer_y:
                y = o
                x = it
            else:
                x = o
                y = it
            pix = y * w + x
            lo = np.int64(tmin_f[_U(pix)])
            n = np.int64(tmax_f[_U(pix)]) - lo + 1
            nu = _U(n)
            base = _U(offs[pix])
            cl = loc[y, x] + 2 * it
            c2base = p2map[y, x]
            for dd in range(nd):
                wt = weights[dd]
                nq = 0
                full = True
                for k in range(npred[dd]):
                    if not pline[dd, k]:
                        continue
                    pi = it - pin[dd, k]
                    if pi < 0 or pi >= n_inner:
                        continue
                    j = _U(pix - pdel[dd, k])
                    a = np.int64(tmin_f[j])
                    z = np.int64(tmax_f[j])
                    m = mbuf[_U(mb0[dd, k] + pi)]
                    qc[nq] = m + c2base
                    qs[nq] = m if rescale else zero
                    # index of h(q, lo); h(q) covers d in [a - 1, z + 1]
                    qh[nq] = _U(hb0[dd, k] + loc_f[j] + 2 * pi + lo - a + 1)
                    qt0[nq] = min(max(a - 1 - lo, 0), n)
                    qt1[nq] = max(min(z + 2 - lo, n), qt0[nq])
                    if qt0[nq] != 0 or qt1[nq] != n:
                        full = False
                    nq += 1
                if not full:
                    # some predecessor overlaps only partly: build the sum in acc
                    for k in range(nq):
                        t0 = qt0[k]
                        t1 = qt1[k]
                        c2 = qc[k]
                        sub = qs[k]
                        out = c2 - sub
                        hb = _U(qh[k] + _U(t0))
                        ab = _U(t0)
                        tb = _U(t1)
                        if k == 0:
                            for t in range(_U(t0)):
                                acc[t] = out
                            for t in range(_U(t1 - t0)):
                                v = hbuf[hb + t]
                                acc[ab + t] = (v if v < c2 else c2) - sub
                            for t in range(_U(n - t1)):
                                acc[tb + t] = out
                        else:
                            for t in range(_U(t0)):
                                acc[t] += out
                            for t in range(_U(t1 - t0)):
                                v = hbuf[hb + t]
                                acc[ab + t] += (v if v < c2 else c2) - sub
                            for t in range(_U(n - t1)):
                                acc[tb + t] += out
                if nq == 2 and full:
                    # both predecessors cover the whole interval: fuse everything
                    ha = qh[0]
                    hb = qh[1]
                    ca = qc[0]
                    cb = qc[1]
                    sa = qs[0]
                    sb = qs[1]
                    for t in range(nu):
                        u = hbuf[ha + t]
                        v = hbuf[hb + t]
                        g = ((u if u < ca else ca) - sa) + ((v if v < cb else cb) - sb)
                        ext[two + t] = cost[base + t] + wt * g
                elif nq == 1 and full:
                    ha = qh[0]
                    ca = qc[0]
                    sa = qs[0]
                    for t in range(nu):
                        u = hbuf[ha + t]
                        ext[two + t] = cost[base + t] + wt * ((u if u < ca else ca) - sa)
                elif nq == 0:
                    for t in range(nu):
                        ext[two + t] = cost[base + t]
                else:
                    for t in range(nu):
                        ext[two + t] = cost[base + t] + wt * acc[t]
                ext[n + 2] = inf
                ext[n + 3] = inf
                hrow = _U((dd * depth + slot) * hlen + cl)
                # four independent chains; min is exact in any order
                b0 = inf
                b1 = inf
                b2 = inf
                b3 = inf
                n4 = nu & ~_U(3)
                for t in range(_U(0), n4, _U(4)):
                    v = ext[two + t]
                    b0 = v if v < b0 else b0
                    v = ext[two + t + one]
                    b1 = v if v < b1 else b1
                    v = ext[two + t + two]
                    b2 = v if v < b2 else b2
                    v = ext[two + t + _U(3)]
                    b3 = v if v < b3 else b3
                for t in range(n4, nu):
                    v = ext[two + t]
                    b0 = v if v < b0 else b0
                b0 = b0 if b0 < b1 else b1
                b2 = b2 if b2 < b3 else b3
                best = b0 if b0 < b2 else b2
                if dd == 0:
                    for t in range(nu):
                        tot[t] = ext[two + t]
                else:
                    for t in range(nu):
                        tot[t] += ext[two + t]
                for t in range(nu):
                    u = ext[t]
                    v = ext[two + t]
                    u = (u if u < v else v) + p1
                    v = ext[one + t]
                    hbuf[hrow + t] = u if u < v else v
                # h at d = hi and d = hi + 1 only see L(hi - 1) and L(hi)
                for t in range(n, n + 2):
                    u = ext[t] + p1
                    v = ext[t + 1]
                    hbuf[hrow + _U(t)] = u if u < v else v
                mbuf[_U((dd * depth + slot) * n_inner + it)] = best
            if init:
                for t in range(nu):
                    S[base + t] = tot[t] - cscale * cost[base + t]
            else:
                for t in range(nu):
                    S[base + t] += tot[t]


@nb.njit(cache=True)
def _transpose_ragged(src, offs_src, dst, offs_dst, h, w, add):
    # src is laid out over an (h, w) grid, dst over its (w, h) transpose
    tile = 32
    for by in range(0, h, tile):
        for bx in range(0, w, tile):
            for y in range(by, min(by + tile, h)):
                for x in range(bx, min(bx + tile, w)):
                    a = _U(offs_src[y * w + x])
                    b = _U(offs_dst[x * h + y])
                    n = _U(offs_src[y * w + x + 1]) - a
                    if add:
                        for t in range(n):
                            dst[b + t] += src[a + t]
                    else:
                        for t in range(n):
                            dst[b + t] = src[a + t]


def _line_offsets(bounds: SearchBounds, offsets: np.ndarray, outer_y: bool):
    """Offset of every pixel's interval within its scan line, and the longest line."""
    h, w = bounds.shape
    widths = bounds.widths.astype(np.int64)
    if outer_y:
        loc = (offsets[:-1] - np.repeat(offsets[:-1:w], w)).reshape(h, w)
        length = widths.sum(axis=1).max()
    else:
        loc = np.cumsum(widths, axis=0) - widths
        length = widths.sum(axis=0).max()
    return np.ascontiguousarray(loc, dtype=np.int64), int(length)


def _bounds_match(cost: CostVolume, bounds: Optional[SearchBounds]):
    if bounds is None:
        return
    if not (np.array_equal(bounds.tmin, cost.bounds.tmin)
            and np.array_equal(bounds.tmax, cost.bounds.tmax)):
        raise ValueError("search bounds are inconsistent with the cost volume")


def aggregate_sgm(cost: CostVolume, r, edges=None, pen: PenaltySchedule = PenaltySchedule(),
                  bounds: Optional[SearchBounds] = None, rescale: bool = True,
                  base_img=None, match_img=None) -> AggregateVolume:
    """Path cost L_r along one direction with the SGM recurrence."""
    _check_direction(r)
    _bounds_match(cost, bounds)
    return _run_direction(cost, [r], 1.0, edges, pen, rescale, base_img, match_img)


def aggregate_mgm(cost: CostVolume, r, r_perp=None, edges=None,
                  pen: PenaltySchedule = PenaltySchedule(),
                  bounds: Optional[SearchBounds] = None, rescale: bool = True,
                  base_img=None, match_img=None) -> AggregateVolume:
    """Path cost L_r with the MGM recurrence (predecessors p - r and p - r_perp).

    A predecessor outside the image contributes nothing; the 1/2 weight is kept.
    """
    _check_direction(r)
    if r_perp is None:
        r_perp = perpendicular(r)
    if tuple(r_perp) != perpendicular(r):
        raise ValueError(f"{r_perp} is not the anticlockwise perpendicular of {r}")
    _bounds_match(cost, bounds)
    return _run_direction(cost, [r, r_perp], 0.5, edges, pen, rescale, base_img, match_img)


def sum_volumes(parts: Sequence[AggregateVolume], cost: CostVolume, n: int) -> AggregateVolume:
    """S = sum_r L_r - (n - 1) C, removing the data term counted once per path."""
    if n != len(parts):
        raise ValueError(f"direction count {n} != number of parts {len(parts)}")
    if not parts:
        raise ValueError("sum_volumes needs at least one part")
    for p in parts:
        if not p.same_layout(cost):
            raise ValueError("aggregate volumes and cost volume differ in shape")
    acc = np.zeros_like(cost.data, dtype=np.float64)
    for p in parts:
        acc += p.data
    acc -= (n - 1) * cost.data.astype(np.float64)
    return Volume(cost.bounds, acc.astype(np.float32), cost.offsets)


def aggregate_all(cost: CostVolume, n_dirs: int, edges=None,
                  pen: PenaltySchedule = PenaltySchedule(), mgm: bool = False,
                  rescale: bool = True, base_img=None, match_img=None) -> AggregateVolume:
    """Corrected sum volume over the full 8- or 16-direction set.

    Equivalent to ``sum_volumes`` over every direction, without holding all L_r.
    """
    dirs = DirectionSet.of(n_dirs)
    steps = [[r, rp] if mgm else [r] for r, rp in zip(dirs.directions, dirs.perpendiculars)]
    weight = 0.5 if mgm else 1.0
    bounds = cost.bounds
    h, w = bounds.shape
    if edges is None:
        edges = np.zeros((h, w), dtype=bool)
    if edges.shape != (h, w):
        raise ValueError("edge map shape does not match the cost volume")
    adaptive = pen.refine is not None
    if adaptive:
        if base_img is None or match_img is None:
            raise ValueError("adaptive penalties need the base and match images")
        ap = pen.refine
        tau, q1, q2 = ap.tau, ap.q1, ap.q2
        img_b = np.ascontiguousarray(base_img, dtype=np.float64)
        img_m = np.ascontiguousarray(match_img, dtype=np.float64)
    else:
        tau = q1 = q2 = 1.0
        img_b = img_m = np.zeros((1, 1))
    p2map = np.where(edges, pen.p2_edge, pen.p2_flat).astype(np.float32)
    npr = len(steps[0])
    passes = plan_passes(steps, columns_cheap=not adaptive)
    row_passes = [p for p in passes if p[0][0]]
    col_passes = [p for p in passes if not p[0][0]]
    cscale = np.float32(n_dirs - 1)
    if row_passes:
        total = Volume(bounds, np.empty_like(cost.data), cost.offsets)
    else:
        total = Volume(bounds, -cscale * cost.data, cost.offsets)
    if adaptive:
        # the intensity terms refer to image columns, so these stay untransposed
        row_passes, col_passes = passes, []

    def member_arrays(members, swap=False):
        st = [[(b, a) if swap else (a, b) for a, b in steps[k]] for k in members]
        preds = np.array(st, dtype=np.int64).reshape(-1, npr, 2)
        npred = np.full(len(members), npr, dtype=np.int64)
        weights = np.full(len(members), weight, dtype=np.float32)
        return preds, npred, weights

    for pidx, (order, members) in enumerate(row_passes):
        outer_y, outer_rev, inner_rev = order
        loc, line_len = _line_offsets(bounds, cost.offsets, outer_y)
        preds, npred, weights = member_arrays(members)
        if adaptive:
            p1fac = np.array([[_p1_factor(tuple(s), ap.v) for s in steps[k]] for k in members],
                             dtype=np.float64)
            _pass_kernel(
                cost.data, cost.offsets, bounds.tmin, bounds.tmax, loc, line_len, preds,
                npred, weights, outer_y, outer_rev, inner_rev, np.float32(pen.p1), p2map,
                True, img_b, img_m, float(tau), float(q1), float(q2), p1fac,
                np.float32(pen.p2_flat), rescale, total.data, pidx == 0, cscale,
            )
        else:
            _pass_kernel_fixed(
                cost.data, cost.offsets, bounds.tmin, bounds.tmax, loc, line_len, preds,
                npred, weights, outer_y, outer_rev, inner_rev, np.float32(pen.p1), p2map,
                rescale, total.data, pidx == 0, cscale,
            )
    if col_passes:
        # Column-major scans stride through memory; run them on a transposed copy
        # of the volume instead, as row-major scans with swapped step vectors.
        bt = SearchBounds(bounds.tmin.T, bounds.tmax.T)
        offs_t = bt.offsets()
        cost_t = np.empty_like(cost.data)
        _transpose_ragged(cost.data, cost.offsets, cost_t, offs_t, h, w, False)
        sum_t = np.empty_like(cost.data)
        p2_t = np.ascontiguousarray(p2map.T)
        loc, line_len = _line_offsets(bt, offs_t, True)
        for pidx, ((_, outer_rev, inner_rev), members) in enumerate(col_passes):
            preds, npred, weights = member_arrays(members, swap=True)
            _pass_kernel_fixed(
                cost_t, offs_t, bt.tmin, bt.tmax, loc, line_len, preds, npred, weights,
                True, outer_rev, inner_rev, np.float32(pen.p1), p2_t, rescale, sum_t,
                pidx == 0, np.float32(0.0),
            )
        _transpose_ragged(sum_t, offs_t, total.data, cost.offsets, w, h, True)
    return total


@nb.njit(cache=True)
def _wta_kernel(data, offs, tmin, tmax, out):
    h, w = tmin.shape
    for y in range(h):
        for x in range(w):
            i = y * w + x
            lo = tmin[y, x]
            n = tmax[y, x] - lo + 1
            if n <= 0:
                out[y, x] = np.nan
                continue
            b = offs[i]
            best = data[b]
            arg = 0
            for k in range(1, n):
                if data[b + k] < best:
                    best = data[b + k]
                    arg = k
            out[y, x] = lo + arg


def wta(volume: AggregateVolume, bounds: Optional[SearchBounds] = None) -> np.ndarray:
    """Per-pixel argmin over the interval; ties go to the smallest disparity."""
    _bounds_match(volume, bounds)
    b = volume.bounds
    out = np.empty(b.shape, dtype=np.float32)
    _wta_kernel(volume.data, volume.offsets, b.tmin, b.tmax, out)
    return out


__all__ = [
    "DIRECTIONS_8",
    "DIRECTIONS_16",
    "INVALID",
    "AdaptivePenalties",
    "DirectionSet",
    "PenaltySchedule",
    "adaptive_penalties",
    "aggregate_all",
    "aggregate_mgm",
    "aggregate_sgm",
    "canny_edges",
    "direction_class",
    "perpendicular",
    "scan_order",
    "sum_volumes",
    "wta",
]
