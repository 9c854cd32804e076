from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sotrack.geometry import BoundingBox


@dataclass(frozen=True)
class Sample:
    """A training patch (H, W, C) with its binary target map."""

    patch: np.ndarray
    target: np.ndarray
    positive: bool
    source: BoundingBox | None = None

    def __post_init__(self):
        t = self.target
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("target map must be binary")
        if self.positive != bool(t.any()):
            raise ValueError("positive samples need a non-empty target, negatives an empty one")


def to_batch(patches) -> np.ndarray:
    """Stack (H, W, C) patches into an (N, C, H, W) float32 batch."""
    arr = np.stack([np.asarray(p, dtype=np.float32) for p in patches])
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    return to_batch([s.patch for s in samples]), np.stack([s.target for s in samples])
