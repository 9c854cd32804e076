"""8-bit binary PPM (P6) / PGM (P5) frames, scaled to [0, 1] by /255."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

FRAME_SUFFIXES = (".ppm", ".pgm", ".pnm")


def load_frame(path) -> np.ndarray:
    """Read a PPM/PGM file as a float32 (H, W, C) array, C in {1, 3}."""
    with Image.open(path) as img:
        if img.format not in ("PPM",):
            raise ValueError(f"{path}: not a PPM/PGM file (format {img.format})")
        if img.mode not in ("L", "RGB"):
            raise ValueError(f"{path}: unsupported mode {img.mode}; 8-bit gray or RGB only")
        pixels = np.asarray(img, dtype=np.uint8)
    frame = pixels.astype(np.float32) / np.float32(255.0)
    return frame[:, :, None] if frame.ndim == 2 else frame


def to_uint8(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats to bytes, rounding half up."""
    v = np.floor(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5)
    return v.astype(np.uint8)


def save_frame(path, frame: np.ndarray) -> None:
    """Write a (H, W, 1|3) frame as PGM or PPM depending on channel count."""
    data = to_uint8(frame)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    Image.fromarray(data).save(Path(path), format="PPM")


def save_map_pgm(path, prob_map: np.ndarray) -> None:
    """Dump a probability map as an 8-bit PGM for inspection."""
    Image.fromarray(to_uint8(prob_map)).save(Path(path), format="PPM")
