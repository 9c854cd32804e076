"""Online tracking with two differently paced copies of the objectness network.

Both copies are fine-tuned on the first frame. Afterwards the short-term
copy is updated whenever it fires on a background (negative) crop; the
long-term copy is updated only when, in addition, the chosen box is filled
with high probability. Each frame's box comes from whichever copy is more
confident.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from sotrack.config import TrackerConfig, TrainHyper
from sotrack.geometry import (
    BoundingBox,
    BoundsError,
    crop_patch,
    intersection_area,
    render_target_map,
)
from sotrack.inference import BoxEstimate, estimate
from sotrack.nnet import Network, NetSpec, load_weights, train_step
from sotrack.objectness import positive_target
from sotrack.samples import Sample, stack_samples, to_batch

COMPASS = ((0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1))


@dataclass(frozen=True)
class FrameResult:
    box: BoundingBox
    confidence: float
    source: str
    missing: bool
    updated_s: bool = False
    updated_l: bool = False
    fired_s: bool = False

    def __post_init__(self):
        if self.source not in ("S", "L"):
            raise ValueError(f"source must be 'S' or 'L', got {self.source!r}")
        if self.missing and (self.updated_s or self.updated_l):
            raise ValueError("a missing frame cannot trigger updates")
        if self.updated_l and not self.fired_s:
            raise ValueError("long-term update requires the short-term condition")

    def line(self) -> str:
        """``x,y,w,h,confidence,source,missing`` with 1-based x, y."""
        b = self.box
        return (f"{b.x + 1:.4f},{b.y + 1:.4f},{b.w:.4f},{b.h:.4f},"
                f"{self.confidence:.4f},{self.source},{int(self.missing)}")


def parse_result_line(line: str) -> FrameResult:
    parts = line.strip().split(",")
    if len(parts) != 7:
        raise ValueError(f"expected 7 comma-separated fields, got {len(parts)}")
    x, y, w, h, conf = (float(v) for v in parts[:5])
    if parts[6] not in ("0", "1"):
        raise ValueError(f"missing flag must be 0 or 1, got {parts[6]!r}")
    return FrameResult(BoundingBox(x - 1.0, y - 1.0, w, h), conf, parts[5], parts[6] == "1")


@dataclass
class TrackerState:
    net_s: Network
    net_l: Network
    box: BoundingBox
    rng: np.random.Generator
    config: TrackerConfig
    frame_shape: tuple[int, ...]
    frame_index: int = 0
    missing_streak: int = 0
    history: list[FrameResult] = field(default_factory=list)

    def clone(self) -> TrackerState:
        return copy.deepcopy(self)


def _side(spec: NetSpec) -> int:
    return spec.map_size * spec.stride


def gen_positive_samples(frame: np.ndarray, box: BoundingBox, rng: np.random.Generator,
                         config: TrackerConfig, spec: NetSpec) -> list[Sample]:
    """One crop per positive scale, jittered by +/- jitter * side on each axis."""
    out = []
    for f in config.positive_scales:
        side = f * max(box.w, box.h)
        jx = rng.uniform(-config.jitter, config.jitter) * side
        jy = rng.uniform(-config.jitter, config.jitter) * side
        crop = BoundingBox.from_center(box.cx + jx, box.cy + jy, side, side)
        patch, geom = crop_patch(frame, crop, _side(spec), spec.stride)
        out.append(Sample(patch, positive_target(geom, box), True, crop))
    return out


def negative_boxes(box: BoundingBox, scales: Sequence[float]) -> list[tuple[BoundingBox, int, int]]:
    """The box scaled about its center, then moved one own-size step in 8 directions."""
    out = []
    for s in scales:
        scaled = box.scaled(s)
        for dx, dy in COMPASS:
            source = scaled.shifted(dx * scaled.w, dy * scaled.h)
            # (x - w) + w can round back onto the target; step outward by ulps
            while intersection_area(source, box) > 0:
                x = source.x + dx * max(math.ulp(source.x), math.ulp(source.x2))
                y = source.y + dy * max(math.ulp(source.y), math.ulp(source.y2))
                source = BoundingBox(x, y, source.w, source.h)
            out.append((source, dx, dy))
    return out


def negative_crop(source: BoundingBox, dx: int, dy: int) -> BoundingBox:
    """Square around ``source`` growing away from the target, so it never reaches it."""
    side = max(source.w, source.h)
    cx = source.cx + dx * (side - source.w) / 2.0
    cy = source.cy + dy * (side - source.h) / 2.0
    return BoundingBox.from_center(cx, cy, side, side)


def gen_negative_samples(frame: np.ndarray, box: BoundingBox, rng: np.random.Generator | None,
                         config: TrackerConfig, spec: NetSpec) -> list[Sample]:
    """16 background crops around the target (8 directions x 2 scales), all-zero targets."""
    out = []
    for source, dx, dy in negative_boxes(box, config.negative_scales):
        patch, geom = crop_patch(frame, negative_crop(source, dx, dy), _side(spec), spec.stride)
        out.append(Sample(patch, render_target_map(geom, None), False, source))
    return out


def _exact_sum(values) -> float:
    # correctly rounded, so a map whose mass equals the threshold does not fire
    return math.fsum(np.asarray(values, dtype=np.float64).ravel())


def needs_update_S(negative_maps, tau2: float) -> bool:
    """True iff some negative map's total probability exceeds ``tau2``."""
    return any(_exact_sum(m) > tau2 for m in negative_maps)


def needs_update_L(update_s_fired: bool, prob_map: np.ndarray, cell_box, tau3: float) -> bool:
    """Short-term condition and in-box mass above ``tau3 * w * h``."""
    if not update_s_fired:
        return False
    m = np.asarray(prob_map)
    x, y, w, h = cell_box
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > m.shape[1] or y + h > m.shape[0]:
        raise BoundsError(f"box {tuple(cell_box)} outside {m.shape[1]}x{m.shape[0]} map")
    return _exact_sum(m[y:y + h, x:x + w]) > tau3 * (w * h)


def fine_tune(net: Network, samples: Sequence[Sample], iterations: int,
              hyper: TrainHyper) -> list[float]:
    """``iterations`` full-batch gradient steps with dropout active; returns the losses."""
    if not samples:
        raise ValueError("fine-tuning needs at least one sample")
    batch, targets = stack_samples(samples)
    return [train_step(net, batch, targets, hyper) for _ in range(iterations)]


def choose_estimate(est_s: BoxEstimate, est_l: BoxEstimate) -> tuple[BoxEstimate, str]:
    """More confident estimate wins; ties and double misses go to the long-term net."""
    conf_s = 0.0 if est_s.missing else est_s.confidence
    conf_l = 0.0 if est_l.missing else est_l.confidence
    if est_s.missing and est_l.missing:
        return est_l, "L"
    if not est_s.missing and (est_l.missing or conf_s > conf_l):
        return est_s, "S"
    return est_l, "L"


def _check_box_in_frame(frame: np.ndarray, box: BoundingBox) -> None:
    h, w = frame.shape[:2]
    if not (0 <= box.cx < w and 0 <= box.cy < h):
        raise ValueError(f"ground-truth box {box.as_tuple()} lies outside the {w}x{h} frame")


def init_tracker(frame0: np.ndarray, gt: BoundingBox, weights: str | Path | Network,
                 config: TrackerConfig, spec: NetSpec | None = None,
                 seed: int = 0) -> TrackerState:
    """Load the pre-trained weights twice and fine-tune both copies on frame 0."""
    frame0 = np.asarray(frame0, dtype=np.float32)
    if frame0.ndim == 2:
        frame0 = frame0[:, :, None]
    _check_box_in_frame(frame0, gt)
    ss = np.random.SeedSequence(seed)
    rng_seed, s_seed, l_seed = ss.spawn(3)
    if isinstance(weights, Network):
        net_s, net_l = weights.copy(), weights.copy()
    else:
        if spec is None:
            raise ValueError("a network spec is required to load a weight file")
        net_s, net_l = load_weights(weights, spec), load_weights(weights, spec)
    for net in (net_s, net_l):
        for group in net.velocity:
            for v in group:
                v[...] = 0
    net_s.rng = np.random.default_rng(s_seed)
    net_l.rng = np.random.default_rng(l_seed)
    rng = np.random.default_rng(rng_seed)
    spec = net_s.spec
    samples = (gen_positive_samples(frame0, gt, rng, config, spec)
               + gen_negative_samples(frame0, gt, rng, config, spec))
    fine_tune(net_s, samples, config.first_frame_iterations, config.short)
    fine_tune(net_l, samples, config.first_frame_iterations, config.long)
    return TrackerState(net_s, net_l, gt, rng, config, frame0.shape)


def search(state: TrackerState, frame: np.ndarray):
    """Crops at every search scale around the previous box, with both networks' maps."""
    spec = state.net_s.spec
    patches, geoms = [], []
    for f in state.config.inference.search_scales:
        patch, geom = crop_patch(frame, state.box.square(f), _side(spec), spec.stride)
        patches.append(patch)
        geoms.append(geom)
    batch = to_batch(patches)
    return geoms, state.net_s.forward(batch, "infer"), state.net_l.forward(batch, "infer")


def track_step(state: TrackerState, frame: np.ndarray) -> tuple[FrameResult, TrackerState]:
    """Advance the tracker by one frame (mutates and returns ``state``)."""
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    if frame.shape != state.frame_shape:
        raise ValueError(f"frame shape {frame.shape} differs from the sequence's "
                         f"{state.frame_shape}")
    cfg = state.config
    spec = state.net_s.spec
    geoms, maps_s, maps_l = search(state, frame)
    est_s = estimate(maps_s, geoms, state.box, cfg.inference)
    est_l = estimate(maps_l, geoms, state.box, cfg.inference)
    chosen, source = choose_estimate(est_s, est_l)
    state.frame_index += 1
    if chosen.missing:
        state.missing_streak += 1
        result = FrameResult(state.box, 0.0, source, True)
        state.history.append(result)
        return result, state

    state.missing_streak = 0
    box = chosen.box
    negatives = gen_negative_samples(frame, box, state.rng, cfg, spec)
    positives = gen_positive_samples(frame, box, state.rng, cfg, spec)
    neg_maps = state.net_s.forward(to_batch([n.patch for n in negatives]), "infer")
    fired_s = needs_update_S(neg_maps, cfg.tau2(spec.map_size))
    chosen_map = (maps_s if source == "S" else maps_l)[chosen.scale_index]
    fired_l = needs_update_L(fired_s, chosen_map, chosen.cell_box, cfg.tau3)
    samples = positives + negatives
    if fired_s and cfg.update_iterations:
        fine_tune(state.net_s, samples, cfg.update_iterations, cfg.short)
    if fired_l and cfg.update_iterations:
        fine_tune(state.net_l, samples, cfg.update_iterations, cfg.long)
    state.box = box
    result = FrameResult(box, chosen.confidence, source, False,
                         fired_s and cfg.update_iterations > 0,
                         fired_l and cfg.update_iterations > 0, fired_s)
    state.history.append(result)
    return result, state


def first_frame_result(gt: BoundingBox) -> FrameResult:
    return FrameResult(gt, 1.0, "L", False)


def track_sequence(frames, gt0: BoundingBox, weights, config: TrackerConfig,
                   spec: NetSpec | None = None, seed: int = 0) -> list[FrameResult]:
    """Initialise on the first frame and track the rest once (no re-initialisation).

    ``frames`` is any iterable of (H, W, C) arrays.
    """
    it = iter(frames)
    state = init_tracker(next(it), gt0, weights, config, spec, seed)
    results = [first_frame_result(gt0)]
    for frame in it:
        result, state = track_step(state, frame)
        results.append(result)
    return results
