"""Input validation helpers shared across the package."""

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor dimensions are inconsistent with an operation."""


def check_tensor3(t, name="tensor", dtype=np.float64):
    """Return ``t`` as a finite ``(height, width, channels)`` float array.

    2-D input is promoted to a single channel.
    """
    arr = np.asarray(t, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be rank 3 (height, width, channels), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_images(X, name="X"):
    """Return a ``(n_images, height, width, channels)`` float array."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4:
        raise ShapeError(f"{name} must have shape (n, height, width[, channels]), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_positive_int(value, name, minimum=1):
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
