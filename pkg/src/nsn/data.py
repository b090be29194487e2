"""Dataset loading and the pixel preprocessors (normalisation, channel-wise ZCA)."""

import gzip
import hashlib
import logging
import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ShapeError, check_images

logger = logging.getLogger(__name__)

IDX3_MAGIC = 0x00000803
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".ppm", ".pgm", ".webp")


class FormatError(ValueError):
    """A file does not follow the expected container layout."""


@dataclass
class Dataset:
    images: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.images = check_images(self.images)
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("dataset pixels must lie in [0, 1]")

    def __len__(self):
        return len(self.images)

    @property
    def shape(self):
        return self.images.shape[1:]

    def fingerprint(self):
        """SHA-256 of the 8-bit quantised pixels and the shape."""
        h = hashlib.sha256(repr(self.images.shape).encode())
        h.update(np.round(self.images * 255).astype(np.uint8).tobytes())
        return h.hexdigest()


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def load_idx(path, expected_shape=None, limit=None):
    """Read an IDX3 unsigned-byte image file (optionally gzipped).

    Pixels are scaled from [0, 255] to [0, 1].  ``expected_shape`` is an
    optional ``(height, width)`` check.
    """
    with _open(path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise FormatError(f"{path}: truncated IDX header ({len(header)} bytes)")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX3_MAGIC:
            raise FormatError(f"{path}: bad IDX3 magic 0x{magic:08x}")
        if expected_shape is not None and (rows, cols) != tuple(expected_shape)[:2]:
            raise ShapeError(f"{path}: images are {rows}x{cols}, expected {tuple(expected_shape)[:2]}")
        n = count if limit is None else min(count, int(limit))
        payload = fh.read(n * rows * cols)
    if len(payload) < n * rows * cols:
        raise FormatError(f"{path}: truncated payload, expected {n * rows * cols} bytes, got {len(payload)}")
    images = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols, 1)
    return Dataset(images / 255.0, os.path.basename(str(path)))


def write_idx(path, images):
    """Write ``(n, rows, cols)`` uint8-compatible images as IDX3 (gzipped if ``.gz``)."""
    arr = np.asarray(images)
    if arr.ndim == 4 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)
    body = struct.pack(">IIII", IDX3_MAGIC, *arr.shape) + arr.tobytes()
    if str(path).endswith(".gz"):
        with gzip.GzipFile(path, "wb", mtime=0) as fh:
            fh.write(body)
    else:
        with open(path, "wb") as fh:
            fh.write(body)


def load_image_dir(path, size, channels=3, limit=None):
    """Decode every raster in ``path``, bilinear-resize to ``size`` and scale to [0, 1].

    Grayscale files are replicated across channels when ``channels == 3``.
    Undecodable files are skipped with a warning.
    """
    if isinstance(size, int):
        size = (size, size)
    mode = {1: "L", 3: "RGB"}.get(channels)
    if mode is None:
        raise ValueError("channels must be 1 or 3")
    names = sorted(f for f in os.listdir(path) if f.lower().endswith(IMAGE_SUFFIXES))
    images = []
    for name in names:
        if limit is not None and len(images) >= limit:
            break
        try:
            with Image.open(os.path.join(path, name)) as im:
                im = im.convert(mode).resize((size[1], size[0]), Image.BILINEAR)
                arr = np.asarray(im, dtype=np.float64) / 255.0
        except (UnidentifiedImageError, OSError) as exc:
            logger.warning("skipping %s: %s", name, exc)
            continue
        images.append(arr.reshape(size[0], size[1], channels))
    if not images:
        raise FileNotFoundError(f"no decodable images in {path}")
    return Dataset(np.stack(images), os.path.basename(os.path.normpath(str(path))))


class PixelNormalizer(BaseEstimator, TransformerMixin):
    """Subtract the global pixel mean and divide by the global pixel std."""

    kind = "normalize"
    needs_full_image = False

    def fit(self, X, y=None):
        X = check_images(X)
        self.shift_ = float(X.mean())
        self.scale_ = float(X.std()) or 1.0
        return self

    def transform(self, X):
        check_is_fitted(self, "shift_")
        return (np.asarray(X, dtype=np.float64) - self.shift_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "shift_")
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.shift_

    def quantized(self):
        return self


class ZCAWhitening(BaseEstimator, TransformerMixin):
    """Channel-wise ZCA whitening of ``(n, H, W, C)`` images.

    Each colour plane is flattened to an ``H*W`` vector and whitened on its
    own with ``U (L + epsilon I)^{-1/2} U^T``.

    Parameters
    ----------
    epsilon : float
        Added to every eigenvalue before the inverse square root.
    max_images : int
        At most this many images (the first ones) enter the covariance.
    """

    kind = "zca"
    needs_full_image = True

    def __init__(self, epsilon=1e-2, max_images=10000):
        self.epsilon = epsilon
        self.max_images = max_images

    def fit(self, X, y=None):
        X = check_images(X)[: self.max_images]
        if len(X) < 2:
            raise ValueError("ZCA needs at least two images")
        n, h, w, c = X.shape
        planes = X.transpose(3, 0, 1, 2).reshape(c, n, h * w)
        self.mean_ = planes.mean(axis=1)
        self.whitening_ = np.empty((c, h * w, h * w))
        self.dewhitening_ = np.empty((c, h * w, h * w))
        for ch in range(c):
            centred = planes[ch] - self.mean_[ch]
            cov = centred.T @ centred / n
            evals, U = np.linalg.eigh(cov)
            evals = np.clip(evals, 0.0, None) + self.epsilon
            W = (U * evals**-0.5) @ U.T
            D = (U * evals**0.5) @ U.T
            self.whitening_[ch] = 0.5 * (W + W.T)
            self.dewhitening_[ch] = 0.5 * (D + D.T)
        self.image_shape_ = (h, w, c)
        return self

    def _planes(self, X):
        check_is_fitted(self, "mean_")
        X = check_images(X)
        if X.shape[1:] != self.image_shape_:
            raise ShapeError(f"images are {X.shape[1:]}, transform was fit on {self.image_shape_}")
        n, h, w, c = X.shape
        return X.transpose(3, 0, 1, 2).reshape(c, n, h * w)

    def _to_images(self, planes):
        c, n, _ = planes.shape
        h, w, _ = self.image_shape_
        return planes.reshape(c, n, h, w).transpose(1, 2, 3, 0)

    def transform(self, X):
        planes = self._planes(X)
        out = np.einsum("cnd,ced->cne", planes - self.mean_[:, None, :], self.whitening_)
        return self._to_images(out)

    def inverse_transform(self, X):
        planes = self._planes(X)
        out = np.einsum("cnd,ced->cne", planes, self.dewhitening_) + self.mean_[:, None, :]
        return self._to_images(out)

    def quantized(self):
        """Copy with every fitted array rounded to float32 precision."""
        check_is_fitted(self, "mean_")
        q = ZCAWhitening(self.epsilon, self.max_images)
        for name in ("mean_", "whitening_", "dewhitening_"):
            setattr(q, name, getattr(self, name).astype(np.float32).astype(np.float64))
        q.image_shape_ = self.image_shape_
        return q


def fit_zca(ds, epsilon=1e-2, max_images=10000):
    images = ds.images if isinstance(ds, Dataset) else ds
    return ZCAWhitening(epsilon=epsilon, max_images=max_images).fit(images)


def apply_zca(t, zca):
    return zca.transform(np.asarray(t)[None])[0]


def invert_zca(t, zca):
    return zca.inverse_transform(np.asarray(t)[None])[0]


def make_preprocessor(kind, epsilon=1e-2, max_images=10000):
    """Unfitted preprocessor for ``"none"``, ``"normalize"`` or ``"zca"``."""
    if kind in (None, "none"):
        return None
    if kind == "normalize":
        return PixelNormalizer()
    if kind == "zca":
        return ZCAWhitening(epsilon=epsilon, max_images=max_images)
    raise ValueError(f"unknown preprocessing {kind!r}")
