import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermohand.domain import Handedness, KeypointSet, Point2, Sample
from thermohand.preprocess import (DEFAULT_FOREARM_FRACTIONS, AugmentationError, AugmentationSpec,
                                   CropTransform, HandSegmenter, InsufficientForegroundError,
                                   SegmentationConfig, augment, augment_forearm, augment_rotation,
                                   background_subtract, crop_roi, isolate_hands, otsu_threshold,
                                   principal_axis_extremes, rotate_image, tight_crop_resize)


def exhaustive_otsu_split(values):
    """Partition maximizing between-class variance, found by trying every cut."""
    v = np.sort(np.unique(values))
    best, cut = -1.0, None
    for t in v[:-1]:
        lo, hi = values[values <= t], values[values > t]
        w0, w1 = len(lo) / len(values), len(hi) / len(values)
        var = w0 * w1 * (lo.mean() - hi.mean()) ** 2
        if var > best:
            best, cut = var, t
    return cut


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=10, max_size=200).filter(lambda v: len(set(v)) > 1))
def test_otsu_matches_exhaustive_search(values):
    values = np.array(values, dtype=np.float64)
    t = otsu_threshold(values)
    cut = exhaustive_otsu_split(values)
    assert t == cut


def lloyd(coords, init, iters=100):
    centers = init.copy()
    for _ in range(iters):
        d = ((coords[:, None, :] - centers[None]) ** 2).sum(-1)
        labels = d.argmin(1)
        new = np.array([coords[labels == k].mean(0) for k in range(len(centers))])
        if np.allclose(new, centers):
            break
        centers = new
    return labels


@pytest.mark.parametrize("offset", [(0, 0), (60, 90), (250, 30)])
def test_isolate_two_disjoint_squares_exactly(offset):
    dx, dy = offset
    mask = np.zeros((440, 640), dtype=np.uint8)
    mask[100 + dy:180 + dy, 100:180] = 1
    mask[100:180, 230 + dx:310 + dx] = 1
    left, right = isolate_hands(mask, SegmentationConfig(k=2))
    assert len(left) == len(right) == 80 * 80
    assert left[:, 0].max() < 180 and right[:, 0].min() >= 230


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_kmeans_matches_independent_lloyd(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal((100, 100), 15, size=(500, 2))
    b = rng.normal((170, 130), 20, size=(500, 2))
    coords = np.rint(np.vstack([a, b])).astype(int)
    coords = np.unique(coords, axis=0)
    mask = np.zeros((300, 300), dtype=np.uint8)
    coords = coords[(coords >= 0).all(1) & (coords < 300).all(1)]
    mask[coords[:, 1], coords[:, 0]] = 1
    clusters = isolate_hands(mask, SegmentationConfig(k=2, min_blob_area=1))
    ys, xs = np.nonzero(mask)
    pts = np.column_stack([xs, ys]).astype(float)
    labels = lloyd(pts, principal_axis_extremes(pts))
    ours = {tuple(p) for p in clusters[0].tolist()}
    ref = [{tuple(p) for p in pts[labels == k].astype(int).tolist()} for k in range(2)]
    assert ours in ref


def test_small_clusters_dropped_and_empty_raises():
    mask = np.zeros((440, 640), dtype=np.uint8)
    with pytest.raises(InsufficientForegroundError):
        isolate_hands(mask)
    mask[10:40, 10:40] = 1  # 900 px
    assert len(isolate_hands(mask, SegmentationConfig(min_blob_area=400))) == 1


def test_background_subtract_identical_frames_is_empty():
    frame = np.random.default_rng(0).integers(0, 2 ** 16, size=(440, 640)).astype(np.uint16)
    assert not background_subtract(frame, frame).any()


def test_background_subtract_finds_warm_region():
    bg = np.full((440, 640), 1000, dtype=np.uint16)
    frame = bg.copy()
    frame[100:150, 200:260] = 1500
    fg = background_subtract(frame, bg)
    assert fg.sum() == 50 * 60 and fg[120, 230] == 1


def test_crop_roi():
    frame = np.arange(480 * 640).reshape(480, 640)
    roi = crop_roi(frame)
    assert roi.shape == (440, 640) and roi[0, 0] == 0
    with pytest.raises(ValueError):
        crop_roi(np.zeros((100, 100)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 300), st.integers(0, 200), st.integers(30, 200), st.integers(30, 200))
def test_tight_crop_round_trip(x0, y0, w, h):
    mask = np.zeros((440, 640), dtype=np.uint8)
    mask[y0:y0 + h, x0:x0 + w] = 1
    ys, xs = np.nonzero(mask)
    image, t = tight_crop_resize(mask, np.column_stack([xs, ys]))
    assert image.shape == (100, 100)
    for p in (Point2(x0, y0), Point2(x0 + w - 1, y0 + h - 1), Point2(x0 + w // 2, y0 + 3)):
        q = t.to_output(p)
        back = t.to_frame(Point2(round(q.x), round(q.y)))
        assert math.dist(back, p) <= math.sqrt(2) * max(t.scale / 2, 0.5) + 1e-9
        assert abs(back.x - p.x) <= 1 and abs(back.y - p.y) <= 1
        assert math.dist(t.to_frame(q), p) < 1e-9


def _hand_sample():
    img = np.zeros((100, 100), dtype=np.uint8)
    img[20:60, 35:65] = 1      # hand
    img[60:100, 40:60] = 1     # forearm
    kp = KeypointSet((None, Point2(50, 21), None, None, None), (Point2(40, 60), Point2(59, 60)))
    return Sample(img, 2, Handedness.RIGHT, kp)


def test_rotation_zero_is_identity():
    s = _hand_sample()
    r = augment_rotation(s, 0.0)
    assert np.array_equal(r.image, s.image) and r.keypoints == s.keypoints
    assert r.image is not s.image


@pytest.mark.parametrize("angle", [-90, -30, 15, 45, 90])
def test_rotation_moves_keypoints_with_the_image(angle):
    img = np.zeros((100, 100), dtype=np.uint8)
    img[28:33, 68:73] = 1
    kp = KeypointSet((Point2(70, 30), None, None, None, None), (Point2(40, 60), Point2(55, 60)))
    r = augment_rotation(Sample(img, 1, Handedness.LEFT, kp), angle)
    ys, xs = np.nonzero(r.image)
    tip = r.keypoints.fingertips[0]
    assert abs(xs.mean() - tip.x) < 1 and abs(ys.mean() - tip.y) < 1


def test_rotation_quarter_turn_is_counterclockwise():
    img = np.zeros((5, 5), dtype=np.uint8)
    img[2, 4] = 1  # right of center
    out = rotate_image(img, 90)
    assert out[0, 2] == 1  # now above center


def test_rotation_out_of_frame_raises():
    kp = KeypointSet((Point2(99, 0), None, None, None, None), (Point2(40, 60), Point2(55, 60)))
    s = Sample(np.zeros((100, 100), dtype=np.uint8), 1, Handedness.LEFT, kp)
    with pytest.raises(AugmentationError):
        augment_rotation(s, 45)


def test_forearm_fraction_monotone():
    s = _hand_sample()
    areas = [int(augment_forearm(s, f).image.sum()) for f in DEFAULT_FOREARM_FRACTIONS]
    assert areas == sorted(areas)
    assert augment_forearm(s, 1.0).image.sum() == s.image.sum()
    # nothing on the finger side of the wrist line is touched
    assert augment_forearm(s, 0.0).image[:60].sum() == s.image[:60].sum()


def test_augment_grid():
    out = augment(_hand_sample())
    assert len(out) % 10 == 0 and len(out) >= 10
    with pytest.raises(ValueError):
        AugmentationSpec(forearm_lengths=(0.5,))


def test_segmenter_end_to_end():
    bg = np.full((480, 640), 2000, dtype=np.uint16)
    frame = bg.copy()
    frame[100:220, 300:380] = 2600
    seg = HandSegmenter(k=1).fit([bg, bg, bg])
    (crops,) = seg.transform([frame])
    (image, t), = crops
    assert image.shape == (100, 100) and image.mean() > 0.4
    assert isinstance(t, CropTransform)
    p = t.to_frame(Point2(50, 0))
    assert 99 <= p.y <= 101 and 300 <= p.x <= 380
