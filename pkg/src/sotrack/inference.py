"""Turn probability maps into a bounding-box estimate.

Scale selection walks the search crops from smallest to largest and keeps
the first whose map mass exceeds a threshold. The box center is the mean
center of the super-threshold region over a sweep of thresholds; the box
size is then searched around the previous size using the area-weighted
score ``(sum(p) - eps * w * h) * w * h`` on an integral image, averaged over
a sweep of ``eps`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from sotrack.config import InferenceConfig
from sotrack.geometry import (
    BoundingBox,
    PatchGeometry,
    box_sum,
    frame_box_to_map,
    integral,
    map_box_to_frame,
)

CellBox = tuple[int, int, int, int]


@dataclass(frozen=True)
class BoxEstimate:
    box: BoundingBox
    confidence: float
    scale_index: int | None
    missing: bool
    cell_box: CellBox | None = None

    @classmethod
    def missing_at(cls, previous: BoundingBox) -> BoxEstimate:
        return cls(previous, 0.0, None, True, None)


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def select_search_scale(maps: Sequence[np.ndarray], tau_search: float) -> int | None:
    """Index of the first (smallest-scale) map whose total exceeds ``tau_search``."""
    if len(maps) == 0:
        raise ValueError("need at least one map")
    for i, m in enumerate(maps):
        if float(np.sum(m, dtype=np.float64)) > tau_search:
            return i
    return None


def determine_center(prob_map: np.ndarray, tau1_sweep: Sequence[float]) -> tuple[float, float]:
    """Mean center (x, y), in cell units, of the tight box of cells >= tau1."""
    m = np.asarray(prob_map)
    rows, cols = m.shape
    centers = []
    for tau in tau1_sweep:
        hit = m >= tau
        if not hit.any():
            continue
        ys = np.flatnonzero(hit.any(axis=1))
        xs = np.flatnonzero(hit.any(axis=0))
        centers.append(((xs[0] + xs[-1] + 1) / 2.0, (ys[0] + ys[-1] + 1) / 2.0))
    if not centers:
        return (cols / 2.0, rows / 2.0)
    c = np.mean(centers, axis=0)
    return (float(c[0]), float(c[1]))


def score_box(ii: np.ndarray, box, eps: float) -> float:
    """``(sum over box of (p - eps)) * w * h``."""
    _, _, w, h = box.as_tuple() if isinstance(box, BoundingBox) else box
    area = w * h
    return (box_sum(ii, box) - eps * area) * area


def candidate_boxes(center: tuple[float, float], prev_size: tuple[float, float],
                    factors: Sequence[float], map_size: int, refine: int = 2) -> list[CellBox]:
    """Integer cell boxes: previous size times each factor, centered with +/-refine shifts.

    Boxes are clipped into the grid; duplicates are dropped, order is stable.
    """
    cx, cy = center
    pw, ph = prev_size
    seen: dict[CellBox, None] = {}
    for f in factors:
        cw = min(map_size, max(1, _round(pw * f)))
        ch = min(map_size, max(1, _round(ph * f)))
        bx, by = _round(cx - cw / 2.0), _round(cy - ch / 2.0)
        for dy in range(-refine, refine + 1):
            for dx in range(-refine, refine + 1):
                x = min(max(bx + dx, 0), map_size - cw)
                y = min(max(by + dy, 0), map_size - ch)
                seen.setdefault((x, y, cw, ch), None)
    return list(seen)


def _pick(scores: np.ndarray, boxes: list[CellBox]) -> CellBox:
    # highest score, then smaller area, then smaller (x, y)
    best = min(range(len(boxes)),
               key=lambda k: (-scores[k], boxes[k][2] * boxes[k][3], boxes[k][0], boxes[k][1]))
    return boxes[best]


def best_box_given_center(prob_map: np.ndarray, center: tuple[float, float],
                          prev_size: tuple[float, float], config: InferenceConfig) -> BoundingBox:
    """Per-eps argmax of :func:`score_box` over candidates, averaged coordinate-wise."""
    if prev_size[0] <= 0 or prev_size[1] <= 0:
        raise ValueError(f"previous size must be positive, got {prev_size}")
    m = np.asarray(prob_map)
    ii = integral(m)
    boxes = candidate_boxes(center, prev_size, config.size_factors, m.shape[0],
                            config.center_refine)
    sums = np.array([box_sum(ii, b) for b in boxes])
    areas = np.array([b[2] * b[3] for b in boxes], dtype=np.float64)
    winners = []
    for eps in config.eps_sweep:
        scores = (sums - eps * areas) * areas
        winners.append(_pick(scores, boxes))
    x, y, w, h = np.mean(np.array(winners, dtype=np.float64), axis=0)
    return BoundingBox(float(x), float(y), float(w), float(h))


def snap_to_cells(box: BoundingBox, map_size: int) -> CellBox:
    """Round a continuous cell box to an in-grid integer box of at least one cell."""
    w = min(map_size, max(1, _round(box.w)))
    h = min(map_size, max(1, _round(box.h)))
    x = min(max(_round(box.x), 0), map_size - w)
    y = min(max(_round(box.y), 0), map_size - h)
    return (x, y, w, h)


def estimate(maps: Sequence[np.ndarray], geometries: Sequence[PatchGeometry],
             previous: BoundingBox, config: InferenceConfig) -> BoxEstimate:
    """Full map-to-box pipeline for one network over all search scales."""
    if len(maps) != len(geometries):
        raise ValueError("maps and geometries must align")
    map_size = geometries[0].map_size
    idx = select_search_scale(maps, config.tau_search(map_size))
    if idx is None:
        return BoxEstimate.missing_at(previous)
    m, geom = np.asarray(maps[idx]), geometries[idx]
    center = determine_center(m, config.tau1_sweep)
    prev_cells = frame_box_to_map(geom, previous)
    cell_box = best_box_given_center(m, center, (prev_cells.w, prev_cells.h), config)
    snapped = snap_to_cells(cell_box, map_size)
    conf = box_sum(integral(m), snapped) / (snapped[2] * snapped[3])
    return BoxEstimate(map_box_to_frame(geom, cell_box), float(conf), idx, False, snapped)
