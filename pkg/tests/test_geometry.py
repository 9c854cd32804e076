import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sotrack.geometry import (
    PAD_VALUE,
    BoundingBox,
    BoundsError,
    PatchGeometry,
    as_frame,
    box_sum,
    center_error,
    crop_patch,
    frame_box_to_map,
    integral,
    iou,
    map_box_to_frame,
    render_target_map,
)

coord = st.floats(-200, 200, allow_nan=False)
extent = st.floats(0.5, 150, allow_nan=False)
boxes = st.builds(BoundingBox, coord, coord, extent, extent)


# --- BoundingBox / iou / center error ----------------------------------------

@pytest.mark.parametrize("w,h", [(0, 1), (1, -2), (math.nan, 1)])
def test_invalid_boxes(w, h):
    with pytest.raises(ValueError):
        BoundingBox(0, 0, w, h)


def test_iou_examples():
    a = BoundingBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(5, 5, 1, 1)) == 0.0
    assert iou(a, BoundingBox(1, 1, 2, 2)) == pytest.approx(1 / 7, abs=1e-12)
    assert iou(a, BoundingBox(2, 0, 2, 2)) == 0.0  # touching edges


def test_center_error_examples():
    a = BoundingBox(0, 0, 10, 10)
    assert center_error(a, a) == 0.0
    assert center_error(a, a.shifted(3, 4)) == 5.0
    assert center_error(a, BoundingBox(10, 0, 10, 10)) == 10.0


@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    assert iou(a, a) == 1.0


@given(boxes, boxes)
def test_iou_zero_iff_disjoint(a, b):
    overlap = min(a.x2, b.x2) > max(a.x, b.x) and min(a.y2, b.y2) > max(a.y, b.y)
    assert (iou(a, b) > 0) == overlap


def test_box_helpers():
    b = BoundingBox(10, 20, 30, 40)
    assert (b.cx, b.cy, b.x2, b.y2, b.area) == (25, 40, 40, 60, 1200)
    s = b.square(2.0)
    assert (s.w, s.h, s.cx, s.cy) == (80, 80, 25, 40)
    assert b.scaled(0.5).as_tuple() == (17.5, 30, 15, 20)


def test_as_frame_validation():
    assert as_frame(np.zeros((3, 4))).shape == (3, 4, 1)
    with pytest.raises(ValueError):
        as_frame(np.full((3, 4, 3), 2.0))
    with pytest.raises(ValueError):
        as_frame(np.zeros((3, 4, 2)))


# --- crop_patch ------------------------------------------------------------------

def naive_bilinear(frame, crop, side):
    h, w, c = frame.shape
    out = np.zeros((side, side, c))
    scale = crop.w / side

    def px(yy, xx):
        if 0 <= yy < h and 0 <= xx < w:
            return frame[yy, xx].astype(np.float64)
        return np.full(c, PAD_VALUE)

    for v in range(side):
        for u in range(side):
            fx = crop.x + (u + 0.5) * scale - 0.5
            fy = crop.y + (v + 0.5) * scale - 0.5
            x0, y0 = math.floor(fx), math.floor(fy)
            ax, ay = fx - x0, fy - y0
            out[v, u] = ((1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1))
                         + ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1)))
    return out


def test_identity_crop_is_bit_exact():
    frame = np.random.default_rng(0).random((16, 16, 3)).astype(np.float32)
    patch, geom = crop_patch(frame, BoundingBox(0, 0, 16, 16), 16)
    assert np.array_equal(patch, frame)
    assert geom.patch_per_frame == 1.0


def test_crop_outside_frame_is_padding():
    frame = np.zeros((10, 10, 3), np.float32)
    patch, _ = crop_patch(frame, BoundingBox(100, 100, 8, 8), 8)
    assert np.all(patch == np.float32(0.5))


def test_checkerboard_downscale_matches_oracle():
    yy, xx = np.mgrid[0:32, 0:32]
    frame = ((yy + xx) % 2).astype(np.float32)[:, :, None]
    crop = BoundingBox(0, 0, 32, 32)
    patch, _ = crop_patch(frame, crop, 16)
    np.testing.assert_allclose(patch, naive_bilinear(frame, crop, 16), atol=1e-6)
    np.testing.assert_allclose(patch, 0.5, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(-20, 40), st.floats(-20, 40), st.floats(4, 60), st.integers(0, 1000))
def test_crop_matches_bilinear_oracle(x, y, side, seed):
    frame = np.random.default_rng(seed).random((30, 40, 3)).astype(np.float32)
    crop = BoundingBox(x, y, side, side)
    patch, _ = crop_patch(frame, crop, 12, stride=2)
    np.testing.assert_allclose(patch, naive_bilinear(frame, crop, 12), atol=1e-6)


def test_crop_rejects_bad_input():
    frame = np.zeros((10, 10, 1), np.float32)
    with pytest.raises(ValueError):
        crop_patch(frame, BoundingBox(0, 0, 4, 5), 8)
    with pytest.raises(ValueError):
        crop_patch(frame, BoundingBox(0, 0, 4, 4), 7, stride=2)


def test_crop_is_deterministic():
    frame = np.random.default_rng(1).random((20, 20, 3)).astype(np.float32)
    crop = BoundingBox(-3.3, 2.7, 14.1, 14.1)
    assert np.array_equal(crop_patch(frame, crop, 10)[0], crop_patch(frame, crop, 10)[0])


# --- target maps and transforms -------------------------------------------------------

def identity_geom(s=4, r=2):
    return PatchGeometry(BoundingBox(0, 0, s * r, s * r), s * r, s, r)


def test_target_map_examples():
    g = identity_geom()
    expected = np.zeros((4, 4))
    expected[1:3, 1:3] = 1
    assert np.array_equal(render_target_map(g, BoundingBox(2, 2, 4, 4)), expected)
    assert render_target_map(g, BoundingBox(-1, -1, 20, 20)).all()
    assert not render_target_map(g, BoundingBox(50, 50, 5, 5)).any()
    assert not render_target_map(g, None).any()


@settings(max_examples=50, deadline=None)
@given(boxes, st.floats(-50, 50), st.floats(-50, 50), st.floats(10, 200))
def test_target_map_matches_point_enumeration(target, cx, cy, side):
    geom = PatchGeometry(BoundingBox(cx, cy, side, side), 20, 10, 2)
    m = render_target_map(geom, target)
    for i in range(10):
        for j in range(10):
            fx = cx + (2 * (j + 0.5)) * side / 20
            fy = cy + (2 * (i + 0.5)) * side / 20
            inside = target.x <= fx < target.x2 and target.y <= fy < target.y2
            assert m[i, j] == float(inside)


def test_map_box_to_frame_examples():
    g = identity_geom(s=25)
    assert map_box_to_frame(g, BoundingBox(0, 0, 25, 25)).as_tuple() == (0, 0, 50, 50)
    g = PatchGeometry(BoundingBox(10, 10, 100, 100), 50, 25, 2)
    got = map_box_to_frame(g, BoundingBox(5, 5, 10, 10)).as_tuple()
    np.testing.assert_allclose(got, (30, 30, 40, 40), atol=1e-12)


@given(boxes, st.floats(-100, 100), st.floats(-100, 100), st.floats(5, 300),
       st.sampled_from([(25, 2), (50, 2), (10, 4)]))
def test_map_round_trip(box, cx, cy, side, sr):
    s, r = sr
    geom = PatchGeometry(BoundingBox(cx, cy, side, side), s * r, s, r)
    back = map_box_to_frame(geom, frame_box_to_map(geom, box))
    np.testing.assert_allclose(back.as_tuple(), box.as_tuple(), atol=1e-6)


def test_geometry_rejects_inconsistent_side():
    with pytest.raises(ValueError):
        PatchGeometry(BoundingBox(0, 0, 10, 10), 30, 25, 2)


# --- integral images ---------------------------------------------------------------

def test_integral_examples():
    assert not integral(np.zeros((4, 4))).any()
    ii = integral(np.ones((3, 3)))
    assert ii.shape == (4, 4) and ii[3, 3] == 9
    assert not ii[0].any() and not ii[:, 0].any()


def test_integral_matches_prefix_sums():
    m = np.random.default_rng(0).random((5, 5))
    ii = integral(m)
    for i in range(6):
        for j in range(6):
            assert abs(ii[i, j] - sum(m[u, v] for u in range(i) for v in range(j))) < 1e-9


def test_box_sum_random_boxes_brute_force():
    rng = np.random.default_rng(1)
    m = rng.random((25, 25))
    ii = integral(m)
    for _ in range(200):
        w, h = rng.integers(1, 26, size=2)
        x, y = rng.integers(0, 26 - w), rng.integers(0, 26 - h)
        brute = sum(m[v, u] for v in range(y, y + h) for u in range(x, x + w))
        assert abs(box_sum(ii, (x, y, w, h)) - brute) < 1e-9


def test_box_sum_whole_grid_and_errors():
    m = np.random.default_rng(2).random((6, 7))
    ii = integral(m)
    assert box_sum(ii, (0, 0, 7, 6)) == pytest.approx(m.sum(), abs=1e-12)
    assert box_sum(ii, BoundingBox(1, 2, 3, 1)) == pytest.approx(m[2, 1:4].sum())
    for bad in [(0, 0, 0, 1), (5, 0, 3, 1), (-1, 0, 2, 2), (0.5, 0, 2, 2)]:
        with pytest.raises(BoundsError):
            box_sum(ii, bad)


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.data())
def test_box_sum_property(seed, data):
    rows = data.draw(st.integers(1, 12))
    cols = data.draw(st.integers(1, 12))
    m = np.random.default_rng(seed).random((rows, cols))
    x = data.draw(st.integers(0, cols - 1))
    y = data.draw(st.integers(0, rows - 1))
    w = data.draw(st.integers(1, cols - x))
    h = data.draw(st.integers(1, rows - y))
    assume(w >= 1 and h >= 1)
    assert abs(box_sum(integral(m), (x, y, w, h)) - m[y:y + h, x:x + w].sum()) < 1e-9


@given(st.integers(0, 2**32 - 1))
def test_integral_monotone_for_nonnegative_maps(seed):
    ii = integral(np.random.default_rng(seed).random((7, 5)))
    assert np.all(np.diff(ii, axis=0) >= 0) and np.all(np.diff(ii, axis=1) >= 0)
