"""Per-pixel disparity intervals and the ragged volumes stored over them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SearchBounds:
    """Inclusive per-pixel disparity interval ``[tmin, tmax]``."""

    tmin: np.ndarray
    tmax: np.ndarray

    def __post_init__(self):
        tmin = np.ascontiguousarray(self.tmin, dtype=np.int32)
        tmax = np.ascontiguousarray(self.tmax, dtype=np.int32)
        if tmin.shape != tmax.shape or tmin.ndim != 2:
            raise ValueError("tmin and tmax must be 2-D arrays of equal shape")
        if np.any(tmin > tmax):
            raise ValueError("search bounds require tmin <= tmax at every pixel")
        object.__setattr__(self, "tmin", tmin)
        object.__setattr__(self, "tmax", tmax)

    @classmethod
    def uniform(cls, shape, lo: int, hi: int) -> "SearchBounds":
        return cls(np.full(shape, lo, np.int32), np.full(shape, hi, np.int32))

    @property
    def shape(self):
        return self.tmin.shape

    @property
    def widths(self) -> np.ndarray:
        return (self.tmax.astype(np.int64) - self.tmin) + 1

    def offsets(self) -> np.ndarray:
        """Start index of each pixel's run in a flat volume (length H*W + 1)."""
        off = np.zeros(self.tmin.size + 1, dtype=np.int64)
        np.cumsum(self.widths.ravel(), out=off[1:])
        return off

    @property
    def cells(self) -> int:
        return int(self.widths.sum())

    def contains(self, y: int, x: int, d: int) -> bool:
        return bool(self.tmin[y, x] <= d <= self.tmax[y, x])


@dataclass
class Volume:
    """Ragged (pixel, disparity) volume.

    ``data[offsets[y*W + x] + d - tmin[y, x]]`` holds the value at disparity ``d``.
    """

    bounds: SearchBounds
    data: np.ndarray
    offsets: np.ndarray

    @classmethod
    def zeros(cls, bounds: SearchBounds, dtype=np.float32) -> "Volume":
        off = bounds.offsets()
        return cls(bounds, np.zeros(int(off[-1]), dtype=dtype), off)

    @property
    def shape(self):
        return self.bounds.shape

    def pixel(self, y: int, x: int) -> np.ndarray:
        i = y * self.shape[1] + x
        return self.data[self.offsets[i]: self.offsets[i + 1]]

    def value(self, y: int, x: int, d: int):
        if not self.bounds.contains(y, x, d):
            raise IndexError(f"disparity {d} outside interval at ({x}, {y})")
        return self.pixel(y, x)[d - self.bounds.tmin[y, x]]

    def same_layout(self, other: "Volume") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.bounds.tmin, other.bounds.tmin)
            and np.array_equal(self.bounds.tmax, other.bounds.tmax)
        )

    def copy(self) -> "Volume":
        return Volume(self.bounds, self.data.copy(), self.offsets)

    def to_dense(self, fill=np.inf):
        """Dense ``(H, W, D)`` array over the global disparity span plus its first disparity."""
        lo = int(self.bounds.tmin.min())
        hi = int(self.bounds.tmax.max())
        h, w = self.shape
        out = np.full((h, w, hi - lo + 1), fill, dtype=np.float64)
        for y in range(h):
            for x in range(w):
                a = self.bounds.tmin[y, x] - lo
                run = self.pixel(y, x)
                out[y, x, a: a + run.size] = run
        return out, lo


CostVolume = Volume
AggregateVolume = Volume
