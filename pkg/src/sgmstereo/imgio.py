"""Image and disparity-map I/O.

Gray images are 2-D ``float64`` arrays with intensities in [0, 255].
Disparity maps are 2-D ``float32`` arrays where ``INVALID`` (NaN) marks
pixels without a disparity. PFM files store INVALID as ``-inf``.
"""

from __future__ import annotations

import os
import re

import numpy as np
from PIL import Image

INVALID = np.float32(np.nan)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ImageFormatError(ValueError):
    """Raised for unreadable or unsupported image and PFM files."""


def is_valid(disp: np.ndarray) -> np.ndarray:
    return np.isfinite(disp)


def invalid_map(shape) -> np.ndarray:
    return np.full(shape, INVALID, dtype=np.float32)


def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    # magic, width, height, maxval separated by whitespace; '#' comments allowed
    tokens = []
    pos = 0
    token_re = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")
    for _ in range(4):
        m = token_re.match(raw, pos)
        if m is None:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic != b"P5":
        raise ImageFormatError(f"{path}: PGM magic {magic!r} not supported (only binary P5)")
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PGM header") from None
    if maxval > 255:
        raise ImageFormatError(
            f"{path}: PGM maxval {maxval} implies 16-bit samples; only 8-bit is supported"
        )
    pos += 1  # single whitespace byte before the raster
    if len(raw) - pos < width * height:
        raise ImageFormatError(f"{path}: PGM raster shorter than {width}x{height}")
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return data.reshape(height, width).astype(np.float64)


def _read_png(path) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    mode = img.mode
    if mode == "L":
        return np.asarray(img, dtype=np.float64)
    if mode in ("RGB", "RGBA", "P", "LA"):
        rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
        r, g, b = LUMA_WEIGHTS
        return np.rint(r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2])
    raise ImageFormatError(
        f"{path}: image mode {mode!r} not supported (8-bit gray or RGB only; "
        "16-bit, 1-bit and float samples are rejected)"
    )


def load_gray(path) -> np.ndarray:
    """Load a PGM (P5) or 8-bit PNG as a gray image in [0, 255].

    RGB inputs are converted to luma with BT.601 weights and rounded.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head in (b"P5", b"P2", b"P6", b"P3"):
        return _read_pgm(path)
    return _read_png(path)


def save_gray_png(img: np.ndarray, path) -> None:
    Image.fromarray(np.clip(np.rint(img), 0, 255).astype(np.uint8)).save(path)


def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM into a top-to-bottom float32 map.

    Non-finite samples become INVALID.
    """
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ImageFormatError(f"{path}: PFM header {header!r} is not 'Pf' (single channel)")
        dims = fh.readline().split()
        while dims and dims[0].startswith(b"#"):
            dims = fh.readline().split()
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(fh.readline().strip())
        except (IndexError, ValueError):
            raise ImageFormatError(f"{path}: malformed PFM header") from None
        endian = "<" if scale < 0 else ">"
        raw = fh.read()
    if len(raw) != 4 * width * height:
        raise ImageFormatError(
            f"{path}: PFM raster has {len(raw)} bytes, header declares {width}x{height}"
        )
    data = np.frombuffer(raw, dtype=endian + "f4").reshape(height, width)
    # PFM rows run bottom-to-top
    disp = np.flipud(data).astype(np.float32)
    disp[~np.isfinite(disp)] = INVALID
    return disp


def write_pfm(disp: np.ndarray, path) -> None:
    """Write a 2-D map as little-endian PFM; INVALID is stored as -inf."""
    disp = np.asarray(disp, dtype=np.float32)
    if disp.ndim != 2:
        raise ValueError("write_pfm expects a 2-D map")
    height, width = disp.shape
    out = np.where(np.isfinite(disp), disp, -np.inf).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{width} {height}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(out).tobytes())


def downsample2(img: np.ndarray) -> np.ndarray:
    """Halve both dimensions (rounding up) by 2x2 block means.

    Blocks cut by an odd border average only the pixels they contain.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h < 2 or w < 2:
        raise ValueError(f"downsample2 needs at least 2x2 pixels, got {w}x{h}")
    ph, pw = h + (h & 1), w + (w & 1)
    acc = np.zeros((ph, pw))
    cnt = np.zeros((ph, pw))
    acc[:h, :w] = img
    cnt[:h, :w] = 1.0
    s = acc.reshape(ph // 2, 2, pw // 2, 2).sum(axis=(1, 3))
    n = cnt.reshape(ph // 2, 2, pw // 2, 2).sum(axis=(1, 3))
    return s / n


def upsample2_nearest(arr: np.ndarray, shape) -> np.ndarray:
    """Nearest-neighbour x2 replication cropped to ``shape``."""
    up = np.repeat(np.repeat(arr, 2, axis=0), 2, axis=1)
    return np.ascontiguousarray(up[: shape[0], : shape[1]])


def render_error_mask(est: np.ndarray, gt: np.ndarray, delta: float) -> np.ndarray:
    """Foreground where ground truth is valid and the estimate is invalid or off by more than delta."""
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch: estimate {est.shape} vs ground truth {gt.shape}")
    gt_ok = np.isfinite(gt)
    est_ok = np.isfinite(est)
    with np.errstate(invalid="ignore"):
        bad = np.abs(est - gt) > delta
    return gt_ok & (~est_ok | (est_ok & bad))


def write_mask_png(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)
