import numpy as np
import pytest

from sotrack.config import NetConfig, PretrainConfig, TrainHyper
from sotrack.geometry import BoundingBox, intersection_area
from sotrack.imageio import save_frame
from sotrack.objectness import (
    AnnotatedImage,
    GenerationError,
    build_dataset,
    make_negative,
    make_positive,
    pretrain,
    read_manifest,
    synth_image,
)

SMALL_NET = NetConfig(map_size=8, filters=4, hidden=32, pool_grids=[1, 2])


class MidpointRng:
    """Stand-in RNG: padding at its lower bound, zero jitter."""

    def uniform(self, low, high, size=None):
        return low if low > 0 else (low + high) / 2.0


def square_image(side=40, size=96):
    frame = np.full((size, size, 3), 0.5, np.float32)
    x0 = (size - side) // 2
    frame[x0:x0 + side, x0:x0 + side] = 0.05
    return AnnotatedImage(frame, BoundingBox(x0, x0, side, side))


# --- synthetic images ----------------------------------------------------------

def test_synth_image_is_deterministic():
    a = synth_image(np.random.default_rng(4))
    b = synth_image(np.random.default_rng(4))
    assert np.array_equal(a.frame, b.frame) and a.box == b.box
    assert a.frame.dtype == np.float32 and a.frame.shape == (96, 96, 3)


def test_synth_annotation_in_bounds_and_salient():
    rng = np.random.default_rng(0)
    salient = 0
    for _ in range(1000):
        img = synth_image(rng, 64, 48)
        b = img.box
        assert 0 <= b.x and 0 <= b.y and b.x2 <= 64 and b.y2 <= 48
        inside = np.zeros((48, 64), bool)
        inside[int(b.y):int(b.y2), int(b.x):int(b.x2)] = True
        gap = abs(img.frame[inside].mean() - img.frame[~inside].mean())
        salient += gap > 0.2
    assert salient >= 990


def test_synth_rejects_tiny_images():
    with pytest.raises(ValueError):
        synth_image(np.random.default_rng(0), 16, 64)


def test_grayscale_synthesis():
    img = synth_image(np.random.default_rng(1), channels=1)
    assert img.frame.shape == (96, 96, 1)


# --- samples ---------------------------------------------------------------------

def test_positive_targets_never_empty():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        img = synth_image(rng)
        assert min(img.box.w, img.box.h) >= 4
        s = make_positive(img, rng, 25, 2)
        assert s.positive and s.target.any()
        assert s.patch.shape == (50, 50, 3)


def test_positive_cell_fraction_at_minimum_padding():
    s = make_positive(square_image(), MidpointRng(), 25, 2)
    expected = (1 / 1.1) ** 2
    frac = s.target.mean()
    assert abs(frac - expected) <= 0.15 * expected
    crop = s.source
    assert crop.w == pytest.approx(44.0) and (crop.cx, crop.cy) == (48.0, 48.0)


def test_positive_is_deterministic():
    img = synth_image(np.random.default_rng(3))
    a = make_positive(img, np.random.default_rng(9), 25, 2)
    b = make_positive(img, np.random.default_rng(9), 25, 2)
    assert np.array_equal(a.patch, b.patch) and np.array_equal(a.target, b.target)


def test_negative_overlap_bound():
    rng = np.random.default_rng(4)
    made = 0
    while made < 300:
        img = synth_image(rng)
        try:
            s = make_negative(img, rng, 0.3, 25, 2)
        except GenerationError:
            continue
        made += 1
        assert intersection_area(s.source, img.box) / img.box.area <= 0.3
        assert not s.target.any() and not s.positive


def test_negative_impossible_when_object_fills_image():
    img = AnnotatedImage(np.zeros((40, 40, 3), np.float32), BoundingBox(0, 0, 40, 40))
    with pytest.raises(GenerationError):
        make_negative(img, np.random.default_rng(0), 0.3, 8, 2)


def test_negative_rejects_bad_threshold():
    with pytest.raises(ValueError):
        make_negative(square_image(), np.random.default_rng(0), 1.0, 8, 2)


def test_dataset_balance_and_targets():
    cfg = PretrainConfig(dataset_size=200, negative_fraction=0.3)
    batch, targets, labels = build_dataset(cfg, 8, 2, np.random.default_rng(5))
    assert batch.shape == (200, 3, 16, 16)
    assert abs((~labels).mean() - 0.3) <= 0.05
    assert np.all((targets == 0) | (targets == 1))
    assert np.array_equal(targets.reshape(200, -1).any(axis=1), labels)


# --- training loop -----------------------------------------------------------------

def small_cfg(**kw):
    base = dict(dataset_size=48, epochs=6, decay_period=2, decay_factor=0.5, image_size=48,
                hyper=TrainHyper(learning_rate=1e-3))
    base.update(kw)
    return PretrainConfig(**base)


def test_learning_rate_schedule_in_log():
    res = pretrain(SMALL_NET, small_cfg(), seed=3)
    assert [r.epoch for r in res.history] == list(range(6))
    for rec in res.history:
        assert rec.learning_rate == pytest.approx(1e-3 * 0.5 ** (rec.epoch // 2), rel=1e-12)
    assert all(np.isfinite(r.mean_loss) for r in res.history)
    assert res.history[0].line().split()[0] == "0"


def test_pretrain_is_reproducible(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    pretrain(SMALL_NET, small_cfg(epochs=2), seed=7, out=a)
    pretrain(SMALL_NET, small_cfg(epochs=2), seed=7, out=b)
    assert a.read_bytes() == b.read_bytes()
    pretrain(SMALL_NET, small_cfg(epochs=2), seed=8, out=b)
    assert a.read_bytes() != b.read_bytes()


def test_manifest_ingestion(tmp_path):
    rng = np.random.default_rng(6)
    lines = []
    for i in range(3):
        img = synth_image(rng, 48, 48)
        save_frame(tmp_path / f"img{i}.ppm", img.frame)
        b = img.box
        lines.append(f"img{i}.ppm {b.x + 1:g},{b.y + 1:g},{b.w:g},{b.h:g}")
    manifest = tmp_path / "train.txt"
    manifest.write_text("# path x,y,w,h\n" + "\n".join(lines) + "\n")
    images = read_manifest(manifest)
    assert len(images) == 3 and images[0].frame.shape == (48, 48, 3)
    res = pretrain(SMALL_NET, small_cfg(epochs=1), seed=1, images=images)
    assert res.positives + res.negatives == 48


def test_manifest_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("img.ppm 1,2,3\n")
    with pytest.raises(ValueError, match=":1:"):
        read_manifest(bad)
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(ValueError):
        read_manifest(empty)


def test_trained_net_separates_objects(pretrained):
    from sotrack.objectness import evaluate

    rep = evaluate(pretrained.net, np.random.default_rng(2024), count=100)
    assert rep.positive_hit_rate >= 0.9
    assert rep.negative_ratio < 0.25
