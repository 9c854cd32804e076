"""Seeded synthetic tracking sequences: a moving, slowly scaling square on clutter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sotrack.geometry import BoundingBox
from sotrack.objectness import _shape_mask, add_clutter, noise_background, salient_color


@dataclass
class SyntheticSequence:
    name: str
    frames: list[np.ndarray]
    boxes: list[BoundingBox]
    attributes: set[str] = field(default_factory=set)


def _draw_square(img: np.ndarray, box: BoundingBox, outer, inner) -> None:
    h, w = img.shape[:2]
    img[_shape_mask(h, w, box.x, box.y, box.w, box.h, False)] = outer
    core = box.scaled(0.5)
    img[_shape_mask(h, w, core.x, core.y, core.w, core.h, False)] = inner


def _linear_path(rng, n: int, width: int, height: int, margin: float):
    start = np.array([rng.uniform(margin, width - margin), rng.uniform(margin, height - margin)])
    for _ in range(100):
        end = np.array([rng.uniform(margin, width - margin),
                        rng.uniform(margin, height - margin)])
        if np.hypot(*(end - start)) > 0.35 * min(width, height):
            break
    t = np.linspace(0.0, 1.0, n)[:, None]
    return start + t * (end - start)


def moving_square(seed: int, n_frames: int = 100, width: int = 160, height: int = 120,
                  distractor: bool = False) -> SyntheticSequence:
    """Constant-velocity two-tone square whose side changes geometrically per frame.

    With ``distractor=True`` a second square of the same size, pattern and
    brightness (different tint) crosses the target's path mid-sequence,
    passing underneath it.
    """
    rng = np.random.default_rng(seed)
    bg = noise_background(rng, width, height)
    add_clutter(rng, bg, 8)
    bg = bg.astype(np.float32)

    side0 = rng.uniform(22.0, 28.0)
    rate = rng.choice([-1.0, 1.0]) * rng.uniform(0.002, 0.004)
    sides = side0 * (1.0 + rate) ** np.arange(n_frames)
    margin = sides.max() / 2.0 + 2.0
    centers = _linear_path(rng, n_frames, width, height, margin)

    outer = salient_color(rng, float(bg.mean()))
    inner = np.clip(1.0 - outer * 0.5 - 0.25, 0.0, 1.0)
    boxes = [BoundingBox.from_center(float(cx), float(cy), float(s), float(s))
             for (cx, cy), s in zip(centers, sides)]

    d_boxes = []
    if distractor:
        d_outer = np.clip(outer + rng.choice([-1.0, 1.0], size=3) * 0.3, 0.0, 1.0)
        mid = n_frames // 2
        meet = centers[mid]
        direction = centers[-1] - centers[0]
        normal = np.array([-direction[1], direction[0]]) / max(np.hypot(*direction), 1e-9)
        speed = np.hypot(*direction) / max(n_frames - 1, 1) * 1.5
        for k in range(n_frames):
            c = meet + normal * speed * (k - mid)
            d_boxes.append(BoundingBox.from_center(float(c[0]), float(c[1]),
                                                   float(sides[k]), float(sides[k])))

    frames = []
    for k, box in enumerate(boxes):
        img = bg.copy()
        if distractor:
            _draw_square(img, d_boxes[k], d_outer, inner)
        _draw_square(img, box, outer, inner)
        frames.append(img)
    attrs = {"SV", "BC"} if distractor else {"SV"}
    name = f"square{'-distractor' if distractor else ''}-{seed}"
    return SyntheticSequence(name, frames, boxes, attrs)
