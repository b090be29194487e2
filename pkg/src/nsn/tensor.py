"""Strided patch extraction, overlap-averaged stitching and the sigmoid map.

Feature maps and images are plain ``numpy`` arrays of shape
``(height, width, channels)`` stored row-major.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ._validation import ShapeError, check_tensor3


def grid_size(extent, patch, stride):
    """Number of valid (unpadded) window positions along one axis."""
    if patch > extent:
        raise ShapeError(f"patch size {patch} exceeds extent {extent}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return (extent - patch) // stride + 1


def covered_extent(n_cells, patch, stride):
    """Smallest extent whose valid grid has ``n_cells`` positions."""
    return (n_cells - 1) * stride + patch


@dataclass(frozen=True)
class PatchGrid:
    """A ``rows x cols`` grid of equally sized patches.

    ``patches`` has shape ``(rows, cols, patch_h, patch_w, channels)``.
    """

    patches: np.ndarray
    stride: int

    @property
    def rows(self):
        return self.patches.shape[0]

    @property
    def cols(self):
        return self.patches.shape[1]

    @property
    def patch_shape(self):
        return self.patches.shape[2:]

    def flat(self):
        """Patches as a ``(rows * cols, patch_h * patch_w * channels)`` matrix."""
        return self.patches.reshape(self.rows * self.cols, -1)


def extract_patches(t, patch_h, patch_w, stride):
    """Slide a ``patch_h x patch_w`` window over ``t`` with the given stride.

    Patch ``(r, c)`` is the sub-tensor whose origin is ``(r*stride, c*stride)``.
    Only fully contained windows are produced.
    """
    t = check_tensor3(t)
    h, w, _ = t.shape
    rows = grid_size(h, patch_h, stride)
    cols = grid_size(w, patch_w, stride)
    windows = sliding_window_view(t, (patch_h, patch_w), axis=(0, 1))
    # sliding_window_view puts the window axes last: (H', W', C, ph, pw)
    windows = windows[::stride, ::stride][:rows, :cols]
    patches = np.ascontiguousarray(windows.transpose(0, 1, 3, 4, 2))
    return PatchGrid(patches=patches, stride=stride)


def extract_patch_matrix(images, patch_h, patch_w, stride):
    """Patches of a batch ``(n, H, W, C)`` as an ``(n, rows*cols, D)`` array."""
    images = np.asarray(images)
    n, h, w, c = images.shape
    rows = grid_size(h, patch_h, stride)
    cols = grid_size(w, patch_w, stride)
    windows = sliding_window_view(images, (patch_h, patch_w), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :rows, :cols]
    out = windows.transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(out).reshape(n, rows * cols, patch_h * patch_w * c)


def stitch_patches(grid, out_h, out_w):
    """Place every patch at its origin and average where patches overlap.

    Raises ``ShapeError`` if the grid does not fit in ``out_h x out_w`` or if
    any output position is covered by no patch.
    """
    patches = grid.patches if isinstance(grid, PatchGrid) else np.asarray(grid[0])
    stride = grid.stride if isinstance(grid, PatchGrid) else int(grid[1])
    rows, cols, ph, pw, ch = patches.shape
    if covered_extent(rows, ph, stride) > out_h or covered_extent(cols, pw, stride) > out_w:
        raise ShapeError(
            f"{rows}x{cols} grid of {ph}x{pw} patches at stride {stride} "
            f"does not fit in {out_h}x{out_w}"
        )
    total = np.zeros((out_h, out_w, ch), dtype=np.float64)
    count = np.zeros((out_h, out_w, 1), dtype=np.float64)
    # Loop over the (small) patch offsets instead of the grid cells.
    for i in range(ph):
        for j in range(pw):
            rs = slice(i, i + (rows - 1) * stride + 1, stride)
            cs = slice(j, j + (cols - 1) * stride + 1, stride)
            total[rs, cs] += patches[:, :, i, j, :]
            count[rs, cs] += 1.0
    if np.any(count == 0):
        raise ShapeError(f"stitching leaves uncovered positions in {out_h}x{out_w} output")
    return total / count


_TINY = np.finfo(np.float64).tiny
_BELOW_ONE = 1.0 - np.finfo(np.float64).epsneg


def sigmoid_map(t):
    """Elementwise logistic function, kept strictly inside ``(0, 1)``.

    ``expit`` underflows to exactly 0 below about -745; such values are
    lifted to the smallest normal float so the open-interval range holds.
    """
    return np.clip(expit(np.asarray(t, dtype=np.float64)), _TINY, _BELOW_ONE)
