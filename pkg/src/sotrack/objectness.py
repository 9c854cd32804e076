"""Offline objectness pre-training on synthetic (or ingested) annotated images.

Each image carries one salient object. Positives are square crops around the
object with random padding and translation, labelled with the object's box;
negatives are crops that see at most a small part of the object and carry an
all-zero map. The network is trained with momentum SGD on the summed map
cross-entropy, with a step learning-rate decay.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from sotrack.config import NetConfig, PretrainConfig
from sotrack.geometry import (
    BoundingBox,
    PatchGeometry,
    crop_patch,
    intersection_area,
    render_target_map,
)
from sotrack.imageio import load_frame
from sotrack.nnet import Network, TrainingError, build_network, map_loss, save_weights, train_step
from sotrack.samples import Sample, stack_samples, to_batch

log = logging.getLogger(__name__)

PAD_RANGE = (1.1, 2.8)
JITTER = 0.15
MAX_ATTEMPTS = 100
MIN_CONTRAST = 0.35  # fill vs local background, mean over channels


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnnotatedImage:
    frame: np.ndarray
    box: BoundingBox

    def __post_init__(self):
        h, w = self.frame.shape[:2]
        b = self.box
        if b.x < 0 or b.y < 0 or b.x2 > w or b.y2 > h:
            raise ValueError(f"object box {b.as_tuple()} outside {w}x{h} image")


def _shape_mask(h: int, w: int, x0: float, y0: float, bw: float, bh: float,
                ellipse: bool) -> np.ndarray:
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    if ellipse:
        cx, cy = x0 + bw / 2.0, y0 + bh / 2.0
        return ((xs - cx) / (bw / 2.0)) ** 2 + ((ys - cy) / (bh / 2.0)) ** 2 <= 1.0
    return (xs >= x0) & (xs < x0 + bw) & (ys >= y0) & (ys < y0 + bh)


def noise_background(rng: np.random.Generator, width: int, height: int,
                     channels: int = 3) -> np.ndarray:
    """Smooth low-frequency color field in roughly [0.3, 0.7] plus faint pixel noise."""
    gh, gw = rng.integers(3, 7, size=2)
    coarse = rng.uniform(0.3, 0.7, size=(gh, gw, channels))
    field_ = ndimage.zoom(coarse, (height / gh, width / gw, 1), order=1, mode="nearest")
    field_ = field_[:height, :width]
    field_ = field_ + rng.normal(0.0, 0.015, size=field_.shape)
    return np.clip(field_, 0.0, 1.0)


def add_clutter(rng: np.random.Generator, img: np.ndarray, count: int) -> None:
    """Paint ``count`` low-contrast rectangles/ellipses in place."""
    h, w, c = img.shape
    for _ in range(count):
        bw = rng.uniform(0.05, 0.3) * w
        bh = rng.uniform(0.05, 0.3) * h
        x0, y0 = rng.uniform(-bw / 2, w - bw / 2), rng.uniform(-bh / 2, h - bh / 2)
        mask = _shape_mask(h, w, x0, y0, bw, bh, bool(rng.integers(2)))
        if not mask.any():
            continue
        local = img[mask].mean(axis=0)
        img[mask] = np.clip(local + rng.uniform(-0.12, 0.12, size=c), 0.0, 1.0)


def salient_color(rng: np.random.Generator, background_mean: float, channels: int = 3):
    """Fill color far from the local background in brightness, with a random tint."""
    for _ in range(MAX_ATTEMPTS):
        base = rng.uniform(0.0, 0.2) if background_mean >= 0.5 else rng.uniform(0.8, 1.0)
        color = np.clip(base + rng.uniform(-0.15, 0.15, size=channels), 0.0, 1.0)
        if abs(color.mean() - background_mean) >= MIN_CONTRAST:
            break
    return color


def synth_image(rng: np.random.Generator, width: int = 96, height: int = 96,
                channels: int = 3) -> AnnotatedImage:
    """Cluttered noise background with one high-contrast rectangle or ellipse."""
    if width < 32 or height < 32:
        raise ValueError("synthetic images need at least 32x32 pixels")
    img = noise_background(rng, width, height, channels)
    add_clutter(rng, img, int(rng.integers(3, 9)))
    bw = rng.uniform(0.15, 0.6) * width
    bh = rng.uniform(0.15, 0.6) * height
    x0 = rng.uniform(0.0, width - bw)
    y0 = rng.uniform(0.0, height - bh)
    mask = _shape_mask(height, width, x0, y0, bw, bh, bool(rng.integers(2)))
    if not mask.any():
        mask[int(y0 + bh / 2), int(x0 + bw / 2)] = True
    img[mask] = salient_color(rng, float(img[mask].mean()), channels)
    ys, xs = np.nonzero(mask)
    box = BoundingBox(float(xs.min()), float(ys.min()),
                      float(xs.max() + 1 - xs.min()), float(ys.max() + 1 - ys.min()))
    return AnnotatedImage(img.astype(np.float32), box)


def positive_target(geom: PatchGeometry, box: BoundingBox) -> np.ndarray:
    """Rendered target map; an object smaller than a cell still marks its center cell."""
    target = render_target_map(geom, box)
    if not target.any():
        u, v = geom.frame_to_patch(box.cx, box.cy)
        j, i = int(u // geom.stride), int(v // geom.stride)
        if 0 <= i < geom.map_size and 0 <= j < geom.map_size:
            target[i, j] = 1.0
    return target


def make_positive(img: AnnotatedImage, rng, map_size: int, stride: int) -> Sample:
    """Crop of side u * max(w, h), u ~ U[1.1, 2.8], center jittered by +/-15% of the side."""
    b = img.box
    u = rng.uniform(*PAD_RANGE)
    side = u * max(b.w, b.h)
    jx = rng.uniform(-JITTER, JITTER) * side
    jy = rng.uniform(-JITTER, JITTER) * side
    crop = BoundingBox.from_center(b.cx + jx, b.cy + jy, side, side)
    patch, geom = crop_patch(img.frame, crop, map_size * stride, stride)
    target = positive_target(geom, b)
    return Sample(patch, target, bool(target.any()), crop)


def make_negative(img: AnnotatedImage, rng, max_iou: float, map_size: int,
                  stride: int) -> Sample:
    """Random crop showing at most ``max_iou`` of the object's area; all-zero target.

    Crop sizes follow the positive distribution so that scale alone does not
    separate the classes.
    """
    if not 0 <= max_iou < 1:
        raise ValueError("max_iou must be in [0, 1)")
    h, w = img.frame.shape[:2]
    b = img.box
    for _ in range(MAX_ATTEMPTS):
        side = rng.uniform(*PAD_RANGE) * max(b.w, b.h)
        crop = BoundingBox.from_center(rng.uniform(0, w), rng.uniform(0, h), side, side)
        if intersection_area(crop, b) / b.area <= max_iou:
            patch, geom = crop_patch(img.frame, crop, map_size * stride, stride)
            return Sample(patch, render_target_map(geom, None), False, crop)
    raise GenerationError(f"no negative crop within {MAX_ATTEMPTS} attempts")


def read_manifest(path) -> list[AnnotatedImage]:
    """Lines ``relative/path.ppm x,y,w,h`` with 1-based box coordinates."""
    path = Path(path)
    images = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rel, coords = line.rsplit(None, 1)
            x, y, bw, bh = (float(v) for v in coords.split(","))
            box = BoundingBox(x - 1.0, y - 1.0, bw, bh)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad manifest line: {exc}") from None
        frame = load_frame(path.parent / rel)
        images.append(AnnotatedImage(frame, box))
    if not images:
        raise ValueError(f"{path}: manifest lists no images")
    return images


@dataclass
class EpochRecord:
    epoch: int
    learning_rate: float
    mean_loss: float

    def line(self) -> str:
        return f"{self.epoch} {self.learning_rate:.6g} {self.mean_loss:.6f}"


@dataclass
class PretrainResult:
    net: Network
    history: list[EpochRecord] = field(default_factory=list)
    positives: int = 0
    negatives: int = 0


def build_dataset(cfg: PretrainConfig, map_size: int, stride: int, rng: np.random.Generator,
                  images: Sequence[AnnotatedImage] | None = None,
                  channels: int = 3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Generate ``dataset_size`` samples with an exact negative fraction.

    Returns (batch NCHW, targets N x S x S, positive flags).
    """
    n = cfg.dataset_size
    n_neg = int(round(n * cfg.negative_fraction))
    labels = rng.permutation(np.r_[np.zeros(n_neg, bool), np.ones(n - n_neg, bool)])

    def draw() -> AnnotatedImage:
        if images:
            return images[int(rng.integers(len(images)))]
        return synth_image(rng, cfg.image_size, cfg.image_size, channels)

    samples = []
    for positive in labels:
        if positive:
            samples.append(make_positive(draw(), rng, map_size, stride))
            continue
        while True:
            try:
                samples.append(make_negative(draw(), rng, cfg.negative_max_iou, map_size, stride))
                break
            except GenerationError:
                continue
    batch, targets = stack_samples(samples)
    return batch, targets, labels


def pretrain(net_cfg: NetConfig, cfg: PretrainConfig, seed: int = 1, out: str | Path | None = None,
             images: Sequence[AnnotatedImage] | None = None,
             on_epoch: Callable[[EpochRecord], None] | None = None) -> PretrainResult:
    """Build, train and optionally save an objectness network."""
    spec = net_cfg.to_spec()
    rng = np.random.Generator(np.random.PCG64(seed))
    net = build_network(spec, seed)
    batch, targets, labels = build_dataset(cfg, spec.map_size, spec.stride, rng, images,
                                           spec.channels)
    result = PretrainResult(net, positives=int(labels.sum()),
                            negatives=int((~labels).sum()))
    n = len(labels)
    for epoch in range(cfg.epochs):
        hyper = cfg.hyper.model_copy(update={"learning_rate": cfg.learning_rate(epoch)})
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                losses.append(train_step(net, batch[idx], targets[idx], hyper))
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}", exc.layer) from exc
        rec = EpochRecord(epoch, hyper.learning_rate, float(np.mean(losses)))
        result.history.append(rec)
        log.info("epoch %d lr %.3g loss %.4f", rec.epoch, rec.learning_rate, rec.mean_loss)
        if on_epoch is not None:
            on_epoch(rec)
    if out is not None:
        save_weights(net, out)
    return result


@dataclass
class ObjectnessReport:
    positive_hit_rate: float
    mean_positive_sum: float
    mean_negative_sum: float
    mean_loss: float

    @property
    def negative_ratio(self) -> float:
        return self.mean_negative_sum / max(self.mean_positive_sum, 1e-12)


def evaluate(net: Network, rng: np.random.Generator, count: int = 200, image_size: int = 96,
             max_iou: float = 0.3) -> ObjectnessReport:
    """Held-out check on fresh synthetic images.

    ``positive_hit_rate`` is the share of positives whose mean in-box
    probability beats the mean out-of-box probability.
    """
    s, r = net.spec.map_size, net.spec.stride
    pos, neg = [], []
    while len(pos) < count:
        pos.append(make_positive(synth_image(rng, image_size, image_size, net.spec.channels),
                                 rng, s, r))
    while len(neg) < count:
        img = synth_image(rng, image_size, image_size, net.spec.channels)
        try:
            neg.append(make_negative(img, rng, max_iou, s, r))
        except GenerationError:
            continue
    pmaps = _forward_chunks(net, [p.patch for p in pos])
    nmaps = _forward_chunks(net, [q.patch for q in neg])
    hits = []
    for m, smp in zip(pmaps, pos):
        inside = smp.target > 0
        hits.append(not inside.all() and m[inside].mean() > m[~inside].mean())
    targets = np.stack([p.target for p in pos] + [q.target for q in neg])
    loss = map_loss(np.concatenate([pmaps, nmaps]), targets)
    return ObjectnessReport(float(np.mean(hits)), float(pmaps.sum(axis=(1, 2)).mean()),
                            float(nmaps.sum(axis=(1, 2)).mean()), loss)


def _forward_chunks(net: Network, patches, chunk: int = 64) -> np.ndarray:
    out = [net.forward(to_batch(patches[i:i + chunk]), "infer")
           for i in range(0, len(patches), chunk)]
    return np.concatenate(out)

