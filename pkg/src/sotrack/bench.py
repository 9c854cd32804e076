"""One-pass evaluation: sequence manifests, success/precision curves, attribute tables."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from sotrack.config import TrackerConfig
from sotrack.geometry import BoundingBox, center_error, iou
from sotrack.imageio import load_frame, save_frame
from sotrack.nnet import NetSpec, Network
from sotrack.tracker import FrameResult, parse_result_line, track_sequence

log = logging.getLogger(__name__)

FRAME_SUFFIXES = (".ppm", ".pgm")
SUCCESS_GRID = np.linspace(0.0, 1.0, 101)
PRECISION_GRID = np.arange(51, dtype=np.float64)
PRECISION_AT = 20.0


class SequenceError(ValueError):
    pass


@dataclass
class TrackSequence:
    name: str
    frame_paths: list[Path]
    boxes: list[BoundingBox]
    attributes: set[str] = field(default_factory=set)

    def __post_init__(self):
        if len(self.frame_paths) != len(self.boxes):
            raise SequenceError(f"{self.name}: {len(self.frame_paths)} frames but "
                                f"{len(self.boxes)} ground-truth boxes")
        if len(self.boxes) < 2:
            raise SequenceError(f"{self.name}: need at least 2 frames")

    def frames(self) -> Iterable[np.ndarray]:
        for p in self.frame_paths:
            yield load_frame(p)


def parse_box_line(line: str, lineno: int, source: str = "groundtruth.txt") -> BoundingBox:
    """Parse ``x,y,w,h`` (1-based x, y); errors name the line number."""
    parts = [p for p in line.replace("\t", ",").replace(" ", ",").split(",") if p]
    if len(parts) != 4:
        raise SequenceError(f"{source} line {lineno}: expected 4 values, got {len(parts)}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError:
        raise SequenceError(f"{source} line {lineno}: non-numeric value in {line.strip()!r}")
    try:
        return BoundingBox(x - 1.0, y - 1.0, w, h)
    except ValueError as exc:
        raise SequenceError(f"{source} line {lineno}: {exc}") from None


def read_boxes(path: Path) -> list[BoundingBox]:
    boxes = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.strip():
            boxes.append(parse_box_line(line, i, Path(path).name))
    return boxes


def load_sequence(directory: str | Path) -> TrackSequence:
    """Read a sequence directory: ``frames/``, ``groundtruth.txt``, optional ``attributes.txt``."""
    d = Path(directory)
    frame_dir = d / "frames"
    if not frame_dir.is_dir():
        raise SequenceError(f"{d}: missing frames/ directory")
    frames = sorted(p for p in frame_dir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    gt = d / "groundtruth.txt"
    if not gt.is_file():
        raise SequenceError(f"{d}: missing groundtruth.txt")
    boxes = read_boxes(gt)
    attrs: set[str] = set()
    if (d / "attributes.txt").is_file():
        text = (d / "attributes.txt").read_text()
        attrs = {t.strip() for t in text.replace("\n", ",").split(",") if t.strip()}
    return TrackSequence(d.name, frames, boxes, attrs)


def write_sequence(directory: str | Path, frames, boxes: list[BoundingBox],
                   attributes: Iterable[str] = ()) -> Path:
    """Write frames as PPM/PGM plus a 1-based ground-truth file."""
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames, start=1):
        suffix = ".pgm" if frame.ndim == 2 or frame.shape[2] == 1 else ".ppm"
        save_frame(d / "frames" / f"{i:05d}{suffix}", frame)
    write_boxes(d / "groundtruth.txt", boxes)
    attributes = sorted(attributes)
    if attributes:
        (d / "attributes.txt").write_text(",".join(attributes) + "\n")
    return d


def write_boxes(path: str | Path, boxes: list[BoundingBox]) -> None:
    Path(path).write_text("".join(f"{b.x + 1:.4f},{b.y + 1:.4f},{b.w:.4f},{b.h:.4f}\n"
                                  for b in boxes))


def write_results(path: str | Path, results: list[FrameResult]) -> None:
    Path(path).write_text("".join(r.line() + "\n" for r in results))


def read_results(path: str | Path) -> list[BoundingBox]:
    """Boxes from a result file; plain ``x,y,w,h`` ground-truth files are accepted too."""
    boxes = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if line.count(",") == 6:
            try:
                boxes.append(parse_result_line(line).box)
            except ValueError as exc:
                raise SequenceError(f"{Path(path).name} line {i}: {exc}") from None
        else:
            boxes.append(parse_box_line(line, i, Path(path).name))
    return boxes


# --------------------------------------------------------------------------
# curves

@dataclass(frozen=True)
class Curve:
    thresholds: np.ndarray
    values: np.ndarray
    summary: float

    def __post_init__(self):
        if len(self.thresholds) != len(self.values):
            raise ValueError("thresholds and values must align")

    def to_csv(self) -> str:
        rows = ["threshold,value"]
        rows += [f"{t:.6g},{v:.6f}" for t, v in zip(self.thresholds, self.values)]
        rows.append(f"# summary={self.summary!r}")
        return "\n".join(rows) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def _aligned(results, gts) -> None:
    if len(results) != len(gts):
        raise ValueError(f"{len(results)} predictions for {len(gts)} ground-truth boxes")
    if not gts:
        raise ValueError("no frames to evaluate")


def _boxes(items) -> list[BoundingBox]:
    return [r.box if isinstance(r, FrameResult) else r for r in items]


def success_curve(results, gts, thresholds=SUCCESS_GRID) -> Curve:
    """Fraction of frames with overlap strictly above each threshold; summary is the AUC."""
    _aligned(results, gts)
    ious = np.array([iou(a, b) for a, b in zip(_boxes(results), gts)])
    t = np.asarray(thresholds, dtype=np.float64)
    values = (ious[None, :] > t[:, None]).mean(axis=1)
    return Curve(t, values, float(values.mean()))


def precision_curve(results, gts, thresholds=PRECISION_GRID, at: float = PRECISION_AT) -> Curve:
    """Fraction of frames with center error <= each threshold; summary is the value at ``at``."""
    _aligned(results, gts)
    errs = np.array([center_error(a, b) for a, b in zip(_boxes(results), gts)])
    t = np.asarray(thresholds, dtype=np.float64)
    values = (errs[None, :] <= t[:, None]).mean(axis=1)
    idx = np.flatnonzero(np.isclose(t, at))
    summary = float(values[idx[0]]) if idx.size else float(np.mean(errs <= at))
    return Curve(t, values, summary)


def attribute_summary(scores: dict[str, float],
                      attributes: dict[str, set[str]]) -> dict[str, float]:
    """Mean score per attribute tag over the sequences carrying it, sorted by tag."""
    groups: dict[str, list[float]] = {}
    for name, score in scores.items():
        for tag in attributes.get(name, ()):
            groups.setdefault(tag, []).append(score)
    return {tag: float(np.mean(v)) for tag, v in sorted(groups.items())}


# --------------------------------------------------------------------------
# running

@dataclass
class SequenceRun:
    name: str
    results: list[FrameResult] | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_ope(weights: str | Path | Network, config: TrackerConfig, sequences,
            spec: NetSpec | None = None, seed: int = 0) -> list[SequenceRun]:
    """Track each sequence once from its first ground-truth box.

    A failing sequence (unreadable frame, bad box) is reported in its
    ``SequenceRun.error`` and does not stop the others.
    """
    runs = []
    for seq in sequences:
        try:
            results = track_sequence(seq.frames(), seq.boxes[0], weights, config, spec, seed)
            if len(results) != len(seq.boxes):
                raise SequenceError(f"{len(results)} results for {len(seq.boxes)} frames")
            runs.append(SequenceRun(seq.name, results))
        except (OSError, ValueError) as exc:
            log.warning("sequence %s failed: %s", seq.name, exc)
            runs.append(SequenceRun(seq.name, None, str(exc)))
    return runs

