"""Boxes, frame/patch/map coordinate transforms, target maps and integral images.

Conventions: frames and maps are row-major arrays indexed ``[y, x]``. Box
coordinates are continuous and 0-based: pixel ``i`` covers ``[i, i + 1)``.
A map cell ``(row i, col j)`` covers patch pixels ``[r*j, r*(j+1))`` along x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PAD_VALUE = 0.5


class BoundsError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> BoundingBox:
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def scaled(self, factor: float) -> BoundingBox:
        """Same center, extents multiplied by ``factor``."""
        return BoundingBox.from_center(self.cx, self.cy, self.w * factor, self.h * factor)

    def shifted(self, dx: float, dy: float) -> BoundingBox:
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def square(self, factor: float = 1.0) -> BoundingBox:
        """Square of side ``factor * max(w, h)`` sharing this box's center."""
        side = factor * max(self.w, self.h)
        return BoundingBox.from_center(self.cx, self.cy, side, side)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area."""
    if a == b:
        return 1.0
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # (x + w) - x can round above w
    return min(1.0, inter / (a.area + b.area - inter))


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    return iw * ih if iw > 0 and ih > 0 else 0.0


def center_error(a: BoundingBox, b: BoundingBox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def as_frame(pixels) -> np.ndarray:
    """Validate and normalise a frame to a float32 (H, W, C) array."""
    f = np.asarray(pixels, dtype=np.float32)
    if f.ndim == 2:
        f = f[:, :, None]
    if f.ndim != 3 or f.shape[2] not in (1, 3) or f.shape[0] < 1 or f.shape[1] < 1:
        raise ValueError(f"frame must be H x W x {{1,3}}, got shape {f.shape}")
    if f.size and (f.min() < 0.0 or f.max() > 1.0):
        raise ValueError("frame values must lie in [0, 1]")
    return f


@dataclass(frozen=True)
class PatchGeometry:
    """Affine bookkeeping between a square frame crop, its patch and its map."""

    crop: BoundingBox
    side: int
    map_size: int
    stride: int

    def __post_init__(self):
        if self.side != self.map_size * self.stride:
            raise ValueError(f"patch side {self.side} != map size {self.map_size} "
                             f"x stride {self.stride}")
        if not math.isclose(self.crop.w, self.crop.h, rel_tol=1e-12):
            raise ValueError("crop must be square")

    @property
    def patch_per_frame(self) -> float:
        return self.side / self.crop.w

    @property
    def frame_per_cell(self) -> float:
        return self.stride * self.crop.w / self.side

    def frame_to_patch(self, x, y):
        s = self.patch_per_frame
        return (np.subtract(x, self.crop.x) * s, np.subtract(y, self.crop.y) * s)

    def patch_to_frame(self, u, v):
        s = self.crop.w / self.side
        return (self.crop.x + np.multiply(u, s), self.crop.y + np.multiply(v, s))


def crop_patch(frame: np.ndarray, crop: BoundingBox, side: int,
               stride: int = 2) -> tuple[np.ndarray, PatchGeometry]:
    """Bilinearly resample a square frame crop to a ``side`` x ``side`` patch.

    Samples falling outside the frame read the constant ``PAD_VALUE``.
    Returns an (side, side, C) float32 patch and its geometry.
    """
    if not math.isclose(crop.w, crop.h, rel_tol=1e-12):
        raise ValueError(f"crop must be square, got {crop.w} x {crop.h}")
    if side < 1 or side % stride:
        raise ValueError(f"patch side {side} must be a positive multiple of stride {stride}")
    geom = PatchGeometry(crop, side, side // stride, stride)
    f = np.asarray(frame, dtype=np.float32)
    if f.ndim == 2:
        f = f[:, :, None]
    h, w = f.shape[:2]
    scale = crop.w / side
    # sample position, in pixel-index units, of each patch pixel center
    pos = (np.arange(side) + 0.5) * scale - 0.5
    fx = crop.x + pos
    fy = crop.y + pos
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = (fx - x0)[None, :, None]
    ay = (fy - y0)[:, None, None]

    def gather(yi, xi):
        vy = (yi >= 0) & (yi < h)
        vx = (xi >= 0) & (xi < w)
        vals = f[np.clip(yi, 0, h - 1)[:, None], np.clip(xi, 0, w - 1)[None, :]]
        return np.where((vy[:, None] & vx[None, :])[..., None], vals, np.float32(PAD_VALUE))

    a = gather(y0, x0).astype(np.float64)
    b = gather(y0, x0 + 1).astype(np.float64)
    c = gather(y0 + 1, x0).astype(np.float64)
    d = gather(y0 + 1, x0 + 1).astype(np.float64)
    top = (1.0 - ax) * a + ax * b
    bottom = (1.0 - ax) * c + ax * d
    patch = (1.0 - ay) * top + ay * bottom
    return patch.astype(np.float32), geom


def render_target_map(geom: PatchGeometry, target: BoundingBox | None,
                      map_size: int | None = None) -> np.ndarray:
    """Binary S x S map: 1 where the cell center falls inside ``target``.

    ``target=None`` gives the all-zero map used for negative samples.
    """
    s = geom.map_size if map_size is None else map_size
    if s != geom.map_size:
        raise ValueError(f"map size {s} does not match geometry ({geom.map_size})")
    out = np.zeros((s, s), dtype=np.float32)
    if target is None:
        return out
    centers = geom.stride * (np.arange(s) + 0.5)
    fx, fy = geom.patch_to_frame(centers, centers)
    inside_x = (fx >= target.x) & (fx < target.x2)
    inside_y = (fy >= target.y) & (fy < target.y2)
    out[np.ix_(inside_y, inside_x)] = 1.0
    return out


def frame_box_to_map(geom: PatchGeometry, box: BoundingBox) -> BoundingBox:
    """Frame-pixel box to (continuous) map-cell coordinates."""
    u, v = geom.frame_to_patch(box.x, box.y)
    k = geom.patch_per_frame / geom.stride
    return BoundingBox(float(u) / geom.stride, float(v) / geom.stride, box.w * k, box.h * k)


def map_box_to_frame(geom: PatchGeometry, box: BoundingBox) -> BoundingBox:
    """Map-cell box to frame pixels: cells -> patch (x stride) -> frame."""
    x, y = geom.patch_to_frame(box.x * geom.stride, box.y * geom.stride)
    k = geom.frame_per_cell
    return BoundingBox(float(x), float(y), box.w * k, box.h * k)


def integral(prob_map: np.ndarray) -> np.ndarray:
    """(H+1) x (W+1) float64 summed-area table with a zero first row/column.

    ``ii[y, x]`` is the sum of ``prob_map[:y, :x]``.
    """
    m = np.asarray(prob_map, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("integral image needs a 2-D map")
    ii = np.zeros((m.shape[0] + 1, m.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(m, axis=0), axis=1, out=ii[1:, 1:])
    return ii


def _cell_box(box) -> tuple[int, int, int, int]:
    vals = box.as_tuple() if isinstance(box, BoundingBox) else tuple(box)
    if any(float(v) != int(v) for v in vals):
        raise BoundsError(f"box {vals} is not integer-aligned")
    return tuple(int(v) for v in vals)


def box_sum(ii: np.ndarray, box) -> float:
    """Sum over the integer cell box ``(x, y, w, h)`` in O(1)."""
    x, y, w, h = _cell_box(box)
    rows, cols = ii.shape[0] - 1, ii.shape[1] - 1
    if w < 1 or h < 1:
        raise BoundsError(f"box extents must be at least one cell, got {w}x{h}")
    if x < 0 or y < 0 or x + w > cols or y + h > rows:
        raise BoundsError(f"box {(x, y, w, h)} outside {cols}x{rows} grid")
    return float(ii[y + h, x + w] - ii[y + h, x] - ii[y, x + w] + ii[y, x])
