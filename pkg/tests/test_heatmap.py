import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermohand.domain import KeypointSet, Point2
from thermohand.heatmap import (DecodeConfig, DegenerateHeatmapError, HeatmapConfig, HeatmapEncoder,
                                argmax2d, decode_fingertips, decode_fingertips_threshold,
                                decode_wrists, dump_pngs, encode, gaussian, heatmap_cell,
                                to_input_coords)

coord = st.integers(3, 96)


def brute_wrists(channel, d_th):
    """Exhaustive scan: first maximum in row-major order, then the best pixel farther than d_th."""
    best, first = -1.0, None
    for y in range(channel.shape[0]):
        for x in range(channel.shape[1]):
            if channel[y, x] > best:
                best, first = channel[y, x], (x, y)
    best2, second = -math.inf, None
    for y in range(channel.shape[0]):
        for x in range(channel.shape[1]):
            if math.hypot(x - first[0], y - first[1]) > d_th and channel[y, x] > best2:
                best2, second = channel[y, x], (x, y)
    return first, second, best2


@given(coord, coord)
def test_cell_is_the_covering_pixel_block(x, y):
    assert heatmap_cell(Point2(x, y)) == (x // 2, y // 2)
    back = to_input_coords(Point2(x // 2, y // 2))
    assert math.hypot(back.x - x, back.y - y) <= math.sqrt(0.5) + 1e-12


def test_gaussian_values():
    g = gaussian((20, 30))
    assert g[30, 20] == 1.0
    assert g[30, 21] == pytest.approx(math.exp(-1 / 3))
    assert g[32, 22] == pytest.approx(math.exp(-8 / 3))
    # truncated at 4 sigma = 4.899 cells
    assert g[30, 25] == 0.0 and g[30, 24] > 0.0
    assert g.shape == (50, 50)


def test_gaussian_variance_config():
    g = gaussian((10, 10), HeatmapConfig(gaussian_variance=4.0, peak_amplitude=0.5))
    assert g[10, 12] == pytest.approx(0.5 * math.exp(-0.5))


@st.composite
def keypoints(draw):
    mask = draw(st.lists(st.booleans(), min_size=5, max_size=5).filter(any))
    tips = tuple(Point2(draw(coord), draw(coord)) if m else None for m in mask)
    w0 = Point2(draw(coord), draw(coord))
    w1 = Point2(draw(coord), draw(coord))
    return KeypointSet(tips, (w0, w1)), tuple(mask)


@settings(max_examples=200, deadline=None)
@given(keypoints())
def test_encode_decode_round_trip(item):
    kp, mask = item
    stack = encode(kp, mask)
    assert stack.shape == (6, 50, 50)
    for i, m in enumerate(mask):
        if not m:
            assert not stack[i].any()  # hidden fingers leave their channel empty
    for finger, pt, score in decode_fingertips(stack, mask):
        assert (pt.x, pt.y) == heatmap_cell(kp.fingertips[finger])
        assert score == 1.0
    cells = [heatmap_cell(w) for w in kp.wrists]
    if math.dist(*cells) > 5:
        got = decode_wrists(stack)
        assert {(p.x, p.y) for p in got} == set(cells)


@settings(max_examples=100, deadline=None)
@given(keypoints(), st.floats(0.05, 20.0))
def test_decode_invariant_to_positive_scaling(item, c):
    kp, mask = item
    stack = encode(kp, mask)
    assert decode_fingertips(stack, mask)[0][1] == decode_fingertips(c * stack, mask)[0][1]
    try:
        expected = decode_wrists(stack)
    except DegenerateHeatmapError:
        return
    assert decode_wrists(c * stack) == expected


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_decode_wrists_matches_exhaustive_scan(seed):
    stack = np.random.default_rng(seed).random((6, 50, 50))
    w0, w1 = decode_wrists(stack)
    assert w0.distance(w1) > 5
    first, second, _ = brute_wrists(stack[5], 5)
    assert (w0.x, w0.y) == first and (w1.x, w1.y) == second


def test_single_peak_is_degenerate():
    stack = np.zeros((6, 50, 50))
    stack[5] = gaussian((25, 25))
    with pytest.raises(DegenerateHeatmapError):
        decode_wrists(stack)
    with pytest.raises(DegenerateHeatmapError):
        decode_wrists(np.zeros((6, 50, 50)))


def test_wrist_separation_is_configurable():
    stack = np.zeros((6, 50, 50))
    stack[5, 25, 20] = 1.0
    stack[5, 25, 27] = 0.9
    a, b = decode_wrists(stack, DecodeConfig(wrist_min_separation=5))
    assert {a.x, b.x} == {20.0, 27.0}
    with pytest.raises(DegenerateHeatmapError):
        decode_wrists(stack, DecodeConfig(wrist_min_separation=10))


def test_argmax_is_row_major_first():
    ch = np.zeros((50, 50))
    ch[10, 30] = ch[20, 5] = 1.0
    assert argmax2d(ch)[0] == Point2(30.0, 10.0)


def test_threshold_decoder():
    stack = np.zeros((6, 50, 50))
    stack[0, 3, 4] = 0.7
    stack[1, 8, 9] = 0.5
    stack[2, 1, 1] = 0.49
    found = {f: (pt, s) for f, pt, s in decode_fingertips_threshold(stack, 0.5)}
    assert set(found) == {0, 1}
    assert found[0][0] == Point2(4.0, 3.0)


def test_encode_rejects_mask_mismatch():
    kp = KeypointSet((Point2(10, 10), None, None, None, None), (Point2(40, 90), Point2(60, 90)))
    with pytest.raises(ValueError):
        encode(kp, (False, True, False, False, False))


def test_to_input_coords_rejects_outside():
    with pytest.raises(ValueError):
        to_input_coords(Point2(50, 3))


def test_dump_pngs(tmp_path):
    from PIL import Image

    stack = np.zeros((6, 50, 50))
    stack[2, 4, 4] = 1.0
    paths = dump_pngs(stack, tmp_path, "s1")
    assert [p.name for p in paths] == [f"s1_ch{k}.png" for k in range(1, 7)]
    img = np.array(Image.open(paths[2]))
    assert img.shape == (50, 50) and img[4, 4] == 255 and img.sum() == 255


def test_encoder_transformer(small_set, vocab):
    enc = HeatmapEncoder().fit(small_set)
    stacks = enc.transform(small_set[:3])
    assert stacks.shape == (3, 6, 50, 50)
    assert enc.get_params()["gaussian_variance"] == 1.5
