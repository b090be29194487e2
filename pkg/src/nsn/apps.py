"""Applications built on generation: image grids, styling, inpainting,
filter arithmetic parsing and run manifests."""

import json
import platform
import re
import time

import numpy as np
from PIL import Image

from ._validation import ShapeError, check_tensor3
from .generation import GenConfig, descend, postprocess
from .network import forward


def to_uint8(image):
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def tile_grid(images, cols=None, pad=0):
    """Tile equally shaped ``(H, W, C)`` images row-major into one uint8 raster."""
    tiles = [to_uint8(check_tensor3(im)) for im in images]
    if not tiles:
        raise ValueError("no images to tile")
    h, w, c = tiles[0].shape
    if any(t.shape != (h, w, c) for t in tiles):
        raise ShapeError("all grid images must share one shape")
    n = len(tiles)
    cols = cols or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    out = np.zeros((rows * h + (rows - 1) * pad, cols * w + (cols - 1) * pad, c), dtype=np.uint8)
    for i, tile in enumerate(tiles):
        r, q = divmod(i, cols)
        out[r * (h + pad):r * (h + pad) + h, q * (w + pad):q * (w + pad) + w] = tile
    return out


def grid_tile(grid, index, tile_shape, cols, pad=0):
    """Cut tile ``index`` back out of a grid made by ``tile_grid``."""
    h, w = tile_shape[:2]
    r, q = divmod(index, cols)
    return grid[r * (h + pad):r * (h + pad) + h, q * (w + pad):q * (w + pad) + w]


def save_image(path, pixels):
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def load_image(path, shape):
    """Read one raster as a ``shape`` float image in [0, 1]."""
    h, w, c = shape
    with Image.open(path) as im:
        im = im.convert("L" if c == 1 else "RGB")
        if im.size != (w, h):
            im = im.resize((w, h), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr.reshape(h, w, c)


def child_rngs(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def style(net, image, count, cfg=GenConfig()):
    """Re-render ``image`` ``count`` times from its first-layer feature map.

    Each variant uses its own random stream derived from ``cfg.seed``.
    """
    image = check_tensor3(image)
    x = net.preprocess(image[None])[0]
    F1 = forward(net, x)[0]
    return [postprocess(net, descend(net, F1, 1, 0, cfg, rng)) for rng in child_rngs(cfg.seed, count)]


def occluded_cells(mask, spec, rows, cols, threshold=0.5):
    """Grid cells whose receptive window is more than ``threshold`` masked."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros((rows, cols), dtype=bool)
    for r in range(rows):
        for c in range(cols):
            window = mask[r * spec.stride:r * spec.stride + spec.patch_h,
                          c * spec.stride:c * spec.stride + spec.patch_w]
            out[r, c] = window.mean() > threshold
    return out


def region_mse(a, b, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    diff = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))[mask]
    return float(np.mean(diff**2))


def inpaint(net, image, mask, cfg=GenConfig(), rng=None, full_replace=False, fill=0.0):
    """Fill the masked region of ``image`` by conditioning on its top-layer features.

    The masked pixels are set to ``fill`` (``None`` leaves them alone), the
    image is run forward, the first-layer map is regenerated from the final
    layer, occluded cells of the original first-layer map are swapped for the
    regenerated ones, and the image is rendered from the mixed map.

    Returns ``(result, info)``.  ``info`` holds the regenerated and mixed
    first-layer maps, the cell mask, and squared errors in the masked region
    against ``image`` and against the training mean image.
    """
    image = check_tensor3(image)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 3:
        mask = mask.any(axis=2)
    if mask.shape != image.shape[:2]:
        raise ShapeError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    if rng is None:
        rng = cfg.rng()
    occluded = image.copy()
    if fill is not None:
        occluded[mask] = fill
    maps = forward(net, net.preprocess(occluded[None])[0])
    F1, FL = maps[0], maps[-1]
    F1_regen = descend(net, FL, net.n_layers, 1, cfg, rng)
    cells = occluded_cells(mask, net.specs[0], F1.shape[0], F1.shape[1])
    if full_replace:
        cells[:] = True
    F1_mixed = np.where(cells[:, :, None], F1_regen, F1)
    result = postprocess(net, descend(net, F1_mixed, 1, 0, cfg, rng))
    pix_mask = np.broadcast_to(mask[:, :, None], image.shape)
    info = {
        "cells": cells,
        "F1": F1,
        "F1_regenerated": F1_regen,
        "F1_mixed": F1_mixed,
        "occluded_fraction": float(mask.mean()),
        "mse_occluded": region_mse(result, image, pix_mask),
    }
    if net.mean_image is not None:
        info["mse_mean_baseline"] = region_mse(net.mean_image, image, pix_mask)
    return result, info


_TERM = re.compile(r"\s*([+-]?)\s*(\d+)\s*")


def parse_arith(expr, n_filters=None):
    """Parse ``"0 + 1 - 2"`` into ``([0, 1, 2], [1.0, 1.0, -1.0])``."""
    if not expr or not expr.strip():
        raise ValueError("empty filter expression")
    indices, coeffs = [], []
    pos = 0
    while pos < len(expr):
        m = _TERM.match(expr, pos)
        if not m or m.end() == pos or (indices and not m.group(1)):
            raise ValueError(f"malformed filter expression {expr!r} at position {pos}")
        j = int(m.group(2))
        if n_filters is not None and j >= n_filters:
            raise IndexError(f"filter index {j} out of range for {n_filters} filters")
        indices.append(j)
        coeffs.append(-1.0 if m.group(1) == "-" else 1.0)
        pos = m.end()
    return indices, coeffs


def manifest(command, config, started, **extra):
    """Run record written next to every output."""
    out = {
        "command": command,
        "config": config,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "elapsed_seconds": round(time.time() - started, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    out.update(extra)
    return out


def write_manifest(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)
