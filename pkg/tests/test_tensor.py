import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsn._validation import ShapeError
from nsn.tensor import (
    PatchGrid, extract_patch_matrix, extract_patches, grid_size, sigmoid_map, stitch_patches,
)


def test_mnist_first_layer_grid():
    grid = extract_patches(np.zeros((28, 28, 1)), 4, 4, 2)
    assert (grid.rows, grid.cols) == (13, 13)
    assert grid.patch_shape == (4, 4, 1)


def test_last_layer_of_64_arch_gives_single_cell():
    grid = extract_patches(np.zeros((3, 3, 7)), 3, 3, 1)
    assert (grid.rows, grid.cols) == (1, 1)


def test_disjoint_quadrants():
    t = np.arange(16, dtype=float).reshape(4, 4, 1)
    grid = extract_patches(t, 2, 2, 2)
    assert (grid.rows, grid.cols) == (2, 2)
    np.testing.assert_array_equal(grid.patches[0, 1, :, :, 0], [[2, 3], [6, 7]])
    np.testing.assert_array_equal(grid.patches[1, 0, :, :, 0], [[8, 9], [12, 13]])


def test_patch_origin(rng):
    t = rng.random((11, 9, 3))
    grid = extract_patches(t, 3, 2, 3)
    for r in range(grid.rows):
        for c in range(grid.cols):
            np.testing.assert_array_equal(grid.patches[r, c], t[3 * r:3 * r + 3, 3 * c:3 * c + 2])


def test_patch_larger_than_tensor():
    with pytest.raises(ShapeError):
        extract_patches(np.zeros((3, 3, 1)), 4, 2, 1)


def test_batch_extraction_matches_single(rng):
    imgs = rng.random((3, 9, 9, 2))
    X = extract_patch_matrix(imgs, 3, 3, 2)
    for i in range(3):
        np.testing.assert_array_equal(X[i], extract_patches(imgs[i], 3, 3, 2).flat())


def test_stitch_disjoint_is_identity(rng):
    t = rng.random((4, 4, 1))
    np.testing.assert_array_equal(stitch_patches(extract_patches(t, 2, 2, 2), 4, 4), t)


def test_stitch_1d_overlap_average():
    # length-5 signal, patch 3, stride 2: position 2 is covered by both patches
    a = np.array([1.0, 2.0, 3.0])
    b = np.array([10.0, 20.0, 30.0])
    patches = np.stack([a, b]).reshape(1, 2, 1, 3, 1)
    out = stitch_patches(PatchGrid(patches, 2), 1, 5)[0, :, 0]
    np.testing.assert_allclose(out, [1.0, 2.0, (3.0 + 10.0) / 2, 20.0, 30.0])


def test_stitch_constant():
    patches = np.full((3, 3, 4, 4, 2), 0.7)
    np.testing.assert_allclose(stitch_patches(PatchGrid(patches, 2), 8, 8), 0.7)


def test_stitch_uncovered_position_is_error():
    patches = np.ones((2, 2, 2, 2, 1))
    with pytest.raises(ShapeError):
        stitch_patches(PatchGrid(patches, 3), 5, 5)


def test_stitch_grid_too_large():
    with pytest.raises(ShapeError):
        stitch_patches(PatchGrid(np.ones((3, 3, 2, 2, 1)), 2), 4, 4)


def _stitch_oracle(patches, stride, out_h, out_w, order):
    total = np.zeros((out_h, out_w, patches.shape[-1]))
    count = np.zeros((out_h, out_w, 1))
    rows, cols, ph, pw, _ = patches.shape
    for idx in order:
        r, c = divmod(idx, cols)
        total[r * stride:r * stride + ph, c * stride:c * stride + pw] += patches[r, c]
        count[r * stride:r * stride + ph, c * stride:c * stride + pw] += 1
    return total / count


def test_stitch_independent_of_patch_order(rng):
    patches = rng.random((5, 4, 3, 3, 2))
    out = stitch_patches(PatchGrid(patches, 2), 11, 9)
    for _ in range(5):
        order = rng.permutation(20)
        np.testing.assert_allclose(out, _stitch_oracle(patches, 2, 11, 9, order), rtol=0, atol=1e-12)


def test_grid_formula_random_geometries(rng):
    for _ in range(1000):
        h, w = rng.integers(1, 40, size=2)
        ph, pw = rng.integers(1, h + 1), rng.integers(1, w + 1)
        s = int(rng.integers(1, 6))
        grid = extract_patches(np.zeros((h, w, 1)), ph, pw, s)
        assert grid.rows == (h - ph) // s + 1 == grid_size(h, ph, s)
        assert grid.cols == (w - pw) // s + 1


@settings(max_examples=200, deadline=None)
@given(
    rows=st.integers(1, 6), cols=st.integers(1, 6), ph=st.integers(1, 5), pw=st.integers(1, 5),
    stride=st.integers(1, 5), channels=st.integers(1, 3), seed=st.integers(0, 2**31),
)
def test_roundtrip_when_fully_covered(rows, cols, ph, pw, stride, channels, seed):
    stride_h = min(stride, ph)
    stride_w = min(stride, pw)
    if stride_h != stride_w:
        stride_h = stride_w = min(stride_h, stride_w)
    h = (rows - 1) * stride_h + ph
    w = (cols - 1) * stride_w + pw
    t = np.random.default_rng(seed).normal(size=(h, w, channels))
    out = stitch_patches(extract_patches(t, ph, pw, stride_h), h, w)
    if stride_h >= max(ph, pw):
        np.testing.assert_array_equal(out, t)
    else:
        np.testing.assert_allclose(out, t, rtol=0, atol=1e-12)


def test_sigmoid_values():
    assert sigmoid_map(np.zeros((1, 1, 1)))[0, 0, 0] == 0.5
    lo, hi = sigmoid_map(np.array([-1e4, 1e4]))
    assert 0.0 < lo < 1e-300
    assert 1.0 - 1e-15 < hi < 1.0


def test_sigmoid_monotone(rng):
    x = np.sort(rng.normal(scale=5, size=1000))
    x = np.unique(x)
    assert np.all(np.diff(sigmoid_map(x)) > 0)
