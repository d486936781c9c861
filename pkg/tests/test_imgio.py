import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from sgmstereo import imgio
from sgmstereo.imgio import INVALID, ImageFormatError
from sgmstereo.metrics import evaluate


def _write(path, data):
    path.write_bytes(data)
    return path


def test_pgm_decode(tmp_path):
    p = _write(tmp_path / "a.pgm", b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
    img = imgio.load_gray(p)
    assert img.shape == (2, 2)
    np.testing.assert_array_equal(img, [[0, 255], [0, 255]])


def test_pgm_with_comment(tmp_path):
    p = _write(tmp_path / "a.pgm", b"P5\n# hello\n3 1\n255\n" + bytes([1, 2, 3]))
    np.testing.assert_array_equal(imgio.load_gray(p), [[1, 2, 3]])


def test_pgm_16bit_rejected(tmp_path):
    p = _write(tmp_path / "a.pgm", b"P5\n1 1\n65535\n\x00\x01")
    with pytest.raises(ImageFormatError, match="16-bit"):
        imgio.load_gray(p)


def test_ascii_pgm_rejected(tmp_path):
    p = _write(tmp_path / "a.pgm", b"P2\n1 1\n255\n7\n")
    with pytest.raises(ImageFormatError, match="P2"):
        imgio.load_gray(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        imgio.load_gray(tmp_path / "nope.png")


def test_png_rgb_luma(tmp_path):
    rgb = np.array([[[255, 255, 255], [100, 200, 50]]], dtype=np.uint8)
    Image.fromarray(rgb).save(tmp_path / "c.png")
    img = imgio.load_gray(tmp_path / "c.png")
    # 0.299*100 + 0.587*200 + 0.114*50 = 153.0
    np.testing.assert_array_equal(img, [[255, 153]])


def test_png_gray(tmp_path):
    Image.fromarray(np.array([[3, 250]], dtype=np.uint8)).save(tmp_path / "g.png")
    np.testing.assert_array_equal(imgio.load_gray(tmp_path / "g.png"), [[3, 250]])


def test_png_16bit_rejected(tmp_path):
    Image.fromarray(np.array([[3, 60000]], dtype=np.uint16)).save(tmp_path / "g16.png")
    with pytest.raises(ImageFormatError, match="16-bit"):
        imgio.load_gray(tmp_path / "g16.png")


def test_pfm_round_trip_examples(tmp_path):
    p = tmp_path / "m.pfm"
    imgio.write_pfm(np.array([[3.5]], np.float32), p)
    np.testing.assert_array_equal(imgio.read_pfm(p), [[3.5]])
    imgio.write_pfm(np.array([[INVALID, 7]], np.float32), p)
    back = imgio.read_pfm(p)
    assert np.isnan(back[0, 0]) and back[0, 1] == 7


def test_pfm_bytes_by_hand(tmp_path):
    m = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)
    p = tmp_path / "m.pfm"
    imgio.write_pfm(m, p)
    # bottom row first, little-endian float32
    expected = b"Pf\n2 2\n-1.0\n" + struct.pack("<4f", 3.0, 4.0, 1.0, 2.0)
    assert p.read_bytes() == expected


def test_pfm_invalid_written_as_neg_inf(tmp_path):
    p = tmp_path / "m.pfm"
    imgio.write_pfm(np.array([[INVALID]], np.float32), p)
    assert p.read_bytes().endswith(struct.pack("<f", -np.inf))


def test_pfm_big_endian_and_inf_read(tmp_path):
    p = _write(tmp_path / "b.pfm", b"Pf\n2 1\n1.0\n" + struct.pack(">2f", 1.25, np.inf))
    back = imgio.read_pfm(p)
    assert back[0, 0] == 1.25 and np.isnan(back[0, 1])


def test_pfm_bad_header(tmp_path):
    p = _write(tmp_path / "c.pfm", b"PF\n1 1\n-1.0\n" + b"\0" * 12)
    with pytest.raises(ImageFormatError, match="Pf"):
        imgio.read_pfm(p)


def test_pfm_dimension_mismatch(tmp_path):
    p = _write(tmp_path / "c.pfm", b"Pf\n2 2\n-1.0\n" + b"\0" * 12)
    with pytest.raises(ImageFormatError, match="2x2"):
        imgio.read_pfm(p)


maps = arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.one_of(st.floats(-1e6, 1e6, width=32), st.just(np.float32(np.nan))))


@given(maps)
def test_pfm_round_trip_property(tmp_path_factory, m):
    p = tmp_path_factory.mktemp("pfm") / "m.pfm"
    imgio.write_pfm(m, p)
    back = imgio.read_pfm(p)
    assert back.shape == m.shape
    np.testing.assert_array_equal(np.isnan(back), np.isnan(m))
    ok = ~np.isnan(m)
    assert back[ok].tobytes() == m[ok].tobytes()


def test_downsample_examples():
    np.testing.assert_array_equal(imgio.downsample2(np.full((2, 2), 10.0)), [[10]])
    np.testing.assert_array_equal(imgio.downsample2(np.array([[0, 100], [100, 0]])), [[50]])
    out = imgio.downsample2(np.full((3, 3), 7.0))
    assert out.shape == (2, 2)
    np.testing.assert_array_equal(out, 7)


def test_downsample_partial_block():
    img = np.array([[0, 2, 10], [4, 6, 20]], float)
    np.testing.assert_array_equal(imgio.downsample2(img), [[3, 15]])


def test_downsample_too_small():
    with pytest.raises(ValueError):
        imgio.downsample2(np.zeros((1, 4)))


@given(arrays(np.float64, st.tuples(st.integers(1, 8).map(lambda k: 2 * k),
                                    st.integers(1, 8).map(lambda k: 2 * k)),
              elements=st.floats(0, 255)))
def test_downsample_preserves_mean(img):
    assert abs(imgio.downsample2(img).mean() - img.mean()) < 1e-6


def test_upsample_nearest():
    up = imgio.upsample2_nearest(np.array([[1, 2]]), (2, 3))
    np.testing.assert_array_equal(up, [[1, 1, 2], [1, 1, 2]])


def test_error_mask_examples():
    gt = np.full((2, 2), 5.0, np.float32)
    assert not imgio.render_error_mask(gt.copy(), gt, 1).any()
    est = gt.copy()
    est[0, 0] = INVALID
    assert imgio.render_error_mask(est, gt, 1)[0, 0]
    est = np.array([[6.4]], np.float32)
    assert imgio.render_error_mask(est, np.array([[5.0]], np.float32), 1)[0, 0]
    assert not imgio.render_error_mask(est, np.array([[5.0]], np.float32), 2)[0, 0]


def test_error_mask_ignores_invalid_gt():
    est = np.array([[INVALID]], np.float32)
    assert not imgio.render_error_mask(est, est.copy(), 1).any()


def test_error_mask_shape_mismatch():
    with pytest.raises(ValueError):
        imgio.render_error_mask(np.zeros((2, 2)), np.zeros((2, 3)), 1)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0, 2.0]))
def test_mask_count_matches_metrics(seed, delta):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 10, (6, 7)).astype(np.float32)
    gt[rng.random(gt.shape) < 0.2] = INVALID
    est = (gt + rng.normal(0, 2, gt.shape)).astype(np.float32)
    est[rng.random(gt.shape) < 0.2] = INVALID
    if not np.isfinite(gt).any():
        return
    rep = evaluate(est, gt, [delta])
    mask = imgio.render_error_mask(est, gt, delta)
    assert mask.sum() == rep.counted["invalid"] + rep.counted[f"bad_{delta:g}"]


def test_write_mask_png(tmp_path):
    imgio.write_mask_png(np.array([[True, False]]), tmp_path / "m.png")
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "m.png")), [[255, 0]])
