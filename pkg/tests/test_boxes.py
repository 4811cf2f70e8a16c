"""Box arithmetic and differentiable-free crop/resize."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialgnn import Box, DataError, box_iou, clip_box, crop_resize, union_box

boxes = st.builds(
    lambda x1, y1, dw, dh: Box(x1, y1, x1 + dw, y1 + dh),
    st.floats(-50, 50), st.floats(-50, 50),
    st.floats(0.1, 40), st.floats(0.1, 40),
)


def test_box_rejects_degenerate_extents():
    with pytest.raises(DataError):
        Box(3.0, 0.0, 3.0, 2.0)
    with pytest.raises(DataError):
        Box(0.0, 5.0, 2.0, 4.0)


def test_iou_hand_values():
    a = Box(0, 0, 2, 2)
    assert box_iou(a, Box(0, 0, 2, 2)) == 1.0
    assert box_iou(a, Box(2, 2, 4, 4)) == 0.0  # touching corners: no interior
    assert box_iou(a, Box(1, 0, 3, 2)) == pytest.approx(2.0 / 6.0)
    assert box_iou(a, Box(0, 1, 2, 3)) == pytest.approx(2.0 / 6.0)


@settings(max_examples=60, deadline=None)
@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    ab, ba = box_iou(a, b), box_iou(b, a)
    assert ab == pytest.approx(ba, abs=1e-12)
    assert 0.0 <= ab <= 1.0 + 1e-12


@settings(max_examples=60, deadline=None)
@given(boxes, boxes)
def test_union_box_is_smallest_enclosing_hull(a, b):
    u = union_box(a, b)
    for box in (a, b):
        assert u.x1 <= box.x1 and u.y1 <= box.y1
        assert u.x2 >= box.x2 and u.y2 >= box.y2
    assert u.x1 == min(a.x1, b.x1) and u.y2 == max(a.y2, b.y2)
    assert box_iou(u, a) > 0 and box_iou(u, b) > 0


def test_clip_box_bounds_and_rejects_outside():
    b = clip_box(Box(-3, -2, 5, 9), width=4, height=4)
    assert (b.x1, b.y1, b.x2, b.y2) == (0, 0, 4, 4)
    with pytest.raises(DataError):
        clip_box(Box(10, 10, 12, 12), width=4, height=4)


def test_crop_resize_integer_aligned_is_exact_copy():
    rng = np.random.default_rng(110)
    img = rng.normal(size=(3, 8, 8)).astype(np.float32)
    out = crop_resize(img, Box(2, 1, 6, 5), out_size=4)
    np.testing.assert_array_equal(out, img[:, 1:5, 2:6])
    assert out.dtype == np.float32


def test_crop_resize_identity_when_box_covers_image():
    rng = np.random.default_rng(111)
    img = rng.normal(size=(2, 6, 6))
    out = crop_resize(img, Box(0, 0, 6, 6), out_size=6)
    np.testing.assert_allclose(out, img, atol=1e-12)


def test_crop_resize_upsample_matches_separable_oracle():
    """2x2 -> 4x4 with half-pixel centers: weights are (7/8,5/8,3/8,1/8)."""
    img = np.zeros((1, 2, 2))
    img[0] = [[0.0, 1.0], [2.0, 3.0]]
    out = crop_resize(img, Box(0, 0, 2, 2), out_size=4)[0]
    w = np.array([[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]])
    # sample centers land at -0.25, 0.25, 0.75, 1.25 in source coordinates;
    # the outermost rows clamp to the edge
    want = w @ np.array([[0.0, 1.0], [2.0, 3.0]]) @ w.T
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_crop_resize_constant_image_stays_constant():
    img = np.full((3, 10, 10), 0.7)
    out = crop_resize(img, Box(1.3, 2.7, 8.9, 9.1), out_size=5)
    np.testing.assert_allclose(out, 0.7, atol=1e-12)


def test_crop_resize_downsample_average_of_rows():
    # one hot row smeared across half the output rows
    img = np.zeros((1, 4, 1))
    img[0, :, 0] = [0.0, 4.0, 0.0, 0.0]
    out = crop_resize(img, Box(0, 0, 1, 4), out_size=2)[0, :, 0]
    # centers at y=0.5 and y=2.5: first blends rows 0/1 equally, second rows 2/3
    np.testing.assert_allclose(out, [2.0, 0.0], atol=1e-12)


def test_crop_resize_clips_before_sampling():
    rng = np.random.default_rng(112)
    img = rng.normal(size=(1, 5, 5))
    a = crop_resize(img, Box(-10, -10, 5, 5), out_size=5)
    b = crop_resize(img, Box(0, 0, 5, 5), out_size=5)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(DataError):
        crop_resize(img, Box(-5, -5, 0.0, 0.0), out_size=3)  # clips to nothing
