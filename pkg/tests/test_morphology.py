import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multiflow.morphology import area_resize, dilate, fill_holes, mask_postprocess, resize_mask
from oracles import block_mean, dilate_scan, fill_holes_bfs

masks = st.integers(3, 14).flatmap(
    lambda n: arrays(np.uint8, (n, n + 1), elements=st.integers(0, 1)))


def test_solid_square_has_no_holes_and_grows_by_anchor_margins():
    m = np.zeros((20, 20), dtype=np.uint8)
    m[8:11, 8:11] = 1
    np.testing.assert_array_equal(fill_holes(m), m)
    out = mask_postprocess(m)
    ys, xs = np.nonzero(out)
    # 3 up/left, 4 down/right for the 8x8 element anchored at (3, 3)
    assert (ys.min(), ys.max(), xs.min(), xs.max()) == (5, 14, 5, 14)
    assert out.sum() == 10 * 10


def test_ring_interior_is_filled():
    m = np.zeros((7, 7), dtype=np.uint8)
    m[1:6, 1:6] = 1
    m[2:5, 2:5] = 0
    filled = fill_holes(m)
    assert filled[1:6, 1:6].all()
    assert filled.sum() == 25


def test_diagonal_gap_is_not_an_exit_for_a_hole():
    # background cell whose only link to the border is diagonal stays a hole
    m = np.ones((3, 3), dtype=np.uint8)
    m[1, 1] = 0
    m[0, 0] = 0
    assert fill_holes(m)[1, 1] == 1


@given(masks)
def test_fill_holes_matches_bfs_oracle(m):
    np.testing.assert_array_equal(fill_holes(m), fill_holes_bfs(m))


@settings(max_examples=60)
@given(masks, st.integers(1, 9))
def test_dilate_matches_scan_oracle(m, size):
    np.testing.assert_array_equal(dilate(m, size), dilate_scan(m, size, (size - 1) // 2))


@given(masks)
def test_postprocess_matches_composed_oracles(m):
    np.testing.assert_array_equal(mask_postprocess(m), dilate_scan(fill_holes_bfs(m)))


@given(masks)
def test_fill_holes_is_idempotent_and_extensive(m):
    once = fill_holes(m)
    np.testing.assert_array_equal(fill_holes(once), once)
    assert (once >= m).all()


def test_dilate_explicit_anchor():
    m = np.zeros((6, 6), dtype=np.uint8)
    m[2, 2] = 1
    out = dilate(m, size=3, anchor=0)
    np.testing.assert_array_equal(np.argwhere(out).min(axis=0), [2, 2])
    np.testing.assert_array_equal(np.argwhere(out).max(axis=0), [4, 4])


# -- resizing ----------------------------------------------------------------------

def test_resize_uniform_masks():
    np.testing.assert_array_equal(resize_mask(np.ones((8, 8)), (3, 5)), np.ones((3, 5)))
    assert not resize_mask(np.zeros((8, 8)), (4, 4)).any()


def test_resize_three_of_four_is_foreground():
    assert resize_mask(np.array([[1, 1], [1, 0]]), (1, 1))[0, 0] == 1
    assert resize_mask(np.array([[1, 0], [0, 0]]), (1, 1))[0, 0] == 0
    assert resize_mask(np.array([[1, 0], [1, 0]]), (1, 1))[0, 0] == 1  # exactly one half


def test_resize_matches_block_mean_oracle(rng):
    for _ in range(20):
        m = (rng.random((8, 8)) > 0.5).astype(np.uint8)
        np.testing.assert_allclose(area_resize(m, (4, 4)), block_mean(m, 2), atol=1e-12)
        np.testing.assert_array_equal(resize_mask(m, (4, 4)), block_mean(m, 2) >= 0.5)


def test_area_resize_preserves_mean_for_non_integer_factors(rng):
    x = rng.random((10, 7))
    out = area_resize(x, (4, 3))
    assert out.mean() == pytest.approx(x.mean())
