import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synth import texture
from sgmstereo.hierarchy import (
    HierarchyConfig, init_bounds, match_level, match_pair, parse_algorithm, propagate_bounds,
    restrict_range, run_flat, run_hierarchical,
)
from sgmstereo.imgio import INVALID
from sgmstereo.volume import SearchBounds


def noise(shape, seed=0):
    return texture(shape, np.random.default_rng(seed), sigma=0.7)


def shifted(img, k):
    # match[x] = base[x + k] for k > 0 (circular)
    return np.roll(img, -k, axis=1)


def test_init_bounds_examples():
    b, m = init_bounds(0, 64, 8, 4, (3, 3))
    assert (b.tmin == -4).all() and (b.tmax == 12).all()
    assert (m.tmin == -12).all() and (m.tmax == 4).all()
    b, m = init_bounds(-7, 13, 1, 0, (2, 2))
    assert (b.tmin == -7).all() and (b.tmax == 13).all()
    assert (m.tmin == -13).all() and (m.tmax == 7).all()


def test_init_bounds_floor_ceil():
    b, m = init_bounds(-3, 5, 2, 1, (1, 1))
    assert (b.tmin[0, 0], b.tmax[0, 0]) == (-3, 4)
    assert (m.tmin[0, 0], m.tmax[0, 0]) == (-4, 3)


def test_init_bounds_errors():
    with pytest.raises(ValueError):
        init_bounds(5, 1, 1, 0, (2, 2))
    with pytest.raises(ValueError):
        init_bounds(0, 1, 0, 0, (2, 2))


def test_propagate_examples():
    disp = np.full((7, 7), INVALID, np.float32)
    disp[3, 1:6] = [5, 6, 7, 8, 9]
    b = propagate_bounds(disp, 0, 64, 1, 4, 7)
    assert (b.tmin[3, 3], b.tmax[3, 3]) == (1, 13)
    disp[3, 1:6] = [60, 61, 62, 63, 64]
    b = propagate_bounds(disp, 0, 64, 1, 4, 7)
    assert (b.tmin[3, 3], b.tmax[3, 3]) == (56, 68)
    b = propagate_bounds(np.full((5, 5), INVALID, np.float32), 0, 64, 2, 4, 7)
    assert (b.tmin == -4).all() and (b.tmax == 36).all()


def test_propagate_clamps_to_global_range():
    # winners may sit up to eps outside the range; the lower clamp then applies
    b = propagate_bounds(np.full((3, 3), -3.0, np.float32), 0, 64, 1, 4, 3)
    assert (b.tmin == -4).all() and (b.tmax == 1).all()
    b = propagate_bounds(np.full((3, 3), 67.0, np.float32), 0, 64, 1, 4, 3)
    assert (b.tmin == 63).all() and (b.tmax == 68).all()


def test_propagate_border_window_shrinks():
    disp = np.zeros((5, 5), np.float32)
    disp[4, 4] = 10
    b = propagate_bounds(disp, 0, 64, 1, 0, 3)
    assert b.tmax[0, 0] == 0 and b.tmax[3, 3] == 10 and b.tmax[2, 2] == 0


@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.sampled_from([1, 2, 4]))
def test_bound_nesting_and_width(seed, eps, s):
    rng = np.random.default_rng(seed)
    d_min, d_max = -20, 30
    lo_s, hi_s = int(np.floor(d_min / s)), int(np.ceil(d_max / s))
    disp = rng.integers(lo_s, hi_s + 1, (9, 9)).astype(np.float32)
    disp[rng.random(disp.shape) < 0.3] = INVALID
    b = propagate_bounds(disp, d_min, d_max, s, eps, 3)
    width = b.tmax - b.tmin + 1
    assert (width <= hi_s - lo_s + 1 + 2 * eps).all()
    for y in range(9):
        for x in range(9):
            win = disp[max(0, y - 1):y + 2, max(0, x - 1):x + 2]
            win = win[np.isfinite(win)]
            if np.isfinite(disp[y, x]) and win.size:
                assert b.tmin[y, x] <= win.min() and win.max() <= b.tmax[y, x]


def test_constant_window_width():
    b = propagate_bounds(np.full((5, 5), 7.0, np.float32), 0, 64, 1, 3, 7)
    assert ((b.tmax - b.tmin + 1) == 7).all()


def test_self_match_is_zero():
    img = noise((40, 48))
    d_b, d_m = run_hierarchical(img, img, -2, 2, HierarchyConfig(s=2))
    ok = np.isfinite(d_b)
    assert ok.mean() > 0.9
    assert (d_b[ok] == 0).all()
    assert (d_m[np.isfinite(d_m)] == 0).all()


@pytest.mark.parametrize("variant", ["tsgm", "tmgm"])
def test_shift_recovery_scale8(variant):
    img = noise((96, 96), 3)
    d_b, _ = run_hierarchical(img, shifted(img, 8), -16, 16,
                              HierarchyConfig(s=8, variant=variant))
    inner = d_b[8:-8, 8:-16]
    ok = np.isfinite(inner)
    assert ok.mean() > 0.95
    assert (inner[ok] == -8).mean() > 0.99


def test_scale_one_is_flat_run_with_relaxed_range():
    rng = np.random.default_rng(5)
    base = noise((24, 30), 5)
    match = np.roll(base, -2, axis=1) + rng.normal(0, 4, base.shape)
    eps = 3
    got = run_hierarchical(base, match, -4, 4, HierarchyConfig(s=1, eps=eps))
    b, m = init_bounds(-4 - eps, 4 + eps, 1, 0, base.shape)
    from sgmstereo.aggregate import PenaltySchedule
    db, dm = match_level(base, match, b, m, 8, False, PenaltySchedule())
    np.testing.assert_array_equal(got[0], restrict_range(db, -4, 4))
    np.testing.assert_array_equal(got[1], restrict_range(dm, -4, 4))


def test_hierarchy_evaluates_fewer_cells():
    base = noise((64, 64), 6)
    match = shifted(base, 5)
    flat, hier = [], []
    run_flat(base, match, -32, 0, trace=flat)
    run_hierarchical(base, match, -32, 0, HierarchyConfig(s=4), trace=hier)
    assert [t["scale"] for t in hier] == [4, 2, 1]
    assert sum(t["cells"] for t in hier) < flat[0]["cells"]


def test_trace_bounds_are_nested_by_construction():
    base = noise((48, 48), 7)
    trace = []
    run_hierarchical(base, shifted(base, 6), -24, 0, HierarchyConfig(s=4), trace=trace)
    for t in trace:
        b = t["bounds_b"]
        assert (b.tmin <= b.tmax).all()
        assert t["raw_b"].shape == b.shape


def test_small_image_warns(caplog):
    img = noise((12, 12), 8)
    with caplog.at_level(logging.WARNING, logger="sgmstereo.hierarchy"):
        trace = []
        run_hierarchical(img, img, -2, 2, HierarchyConfig(s=8), trace=trace)
    assert "starting the hierarchy at scale 2" in caplog.text
    assert trace[0]["scale"] == 2


@pytest.mark.parametrize("algo", ["sgm8", "mgm16", "tsgm16", "tmgm8"])
def test_deterministic(algo):
    base = noise((32, 40), 9)
    match = shifted(base, 4)
    a = match_pair(base, match, algo, -8, 0)
    b = match_pair(base, match, algo, -8, 0)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_output_within_global_range():
    rng = np.random.default_rng(10)
    base, match = noise((40, 40), 10), noise((40, 40), 11) + rng.normal(0, 1, (40, 40))
    d_b, d_m = match_pair(base, match, "tsgm8", -6, 3)
    for arr, lo, hi in ((d_b, -6, 3), (d_m, -3, 6)):
        v = arr[np.isfinite(arr)]
        assert v.size and v.min() >= lo and v.max() <= hi


def test_restrict_range():
    d = np.array([[-5.0, -4.4, -4.2, 0.0, 3.4, 3.6, -4.6, INVALID]], np.float32)
    out = restrict_range(d, -4, 3)
    np.testing.assert_array_equal(out[0, [1, 2, 3, 4]], [-4, -4, 0, 3])
    assert np.isnan(out[0, [0, 5, 6, 7]]).all()


def test_parse_algorithm():
    assert parse_algorithm("tmgm16") == (True, True, 16)
    assert parse_algorithm("sgm8") == (False, False, 8)
    with pytest.raises(ValueError, match="unknown algorithm"):
        parse_algorithm("bm8")


def test_config_validation():
    for kw in ({"s": 3}, {"s": 0}, {"eps": -1}, {"window": 4}, {"variant": "x"}, {"n": 4}):
        with pytest.raises(ValueError):
            HierarchyConfig(**kw)


def test_run_errors():
    img = noise((16, 16))
    with pytest.raises(ValueError):
        run_hierarchical(img, img, 4, 1)
    with pytest.raises(ValueError):
        run_flat(img, img[:, :-1], 0, 1)
