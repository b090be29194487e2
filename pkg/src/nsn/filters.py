"""Isotropic Gaussian filters: log-density similarity scores and sampling."""

from dataclasses import dataclass

import numpy as np

from ._validation import ShapeError

SIGMA_FLOOR = 1e-4
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianFilter:
    """A mean tensor plus one scalar spread."""

    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("filter mean contains NaN or Inf")


def similarity(x, g):
    """Log of the isotropic Gaussian score of ``x`` under filter ``g``.

    ``-log(sqrt(2*pi) * sigma) - ||x - mu||^2 / (2 * sigma^2)`` where the norm
    runs over every element of the patch.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(g.mu, dtype=np.float64)
    if x.shape != mu.shape:
        raise ShapeError(f"patch shape {x.shape} does not match filter shape {mu.shape}")
    d2 = float(np.sum((x - mu) ** 2))
    return -HALF_LOG_2PI - np.log(g.sigma) - d2 / (2.0 * g.sigma**2)


def log_scores(X, means, sigmas, chunk_size=8192):
    """Score matrix ``(n_patches, n_filters)`` for flattened patches ``X``.

    Squared distances use the ``|x|^2 - 2 x.mu + |mu|^2`` expansion, clipped
    at zero, and are computed in row chunks to bound memory.
    """
    X = np.asarray(X, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if X.shape[1] != means.shape[1]:
        raise ShapeError(f"patch dimension {X.shape[1]} does not match filter dimension {means.shape[1]}")
    mu_sq = np.einsum("ij,ij->i", means, means)
    inv_two_var = 0.5 / sigmas**2
    const = -HALF_LOG_2PI - np.log(sigmas)
    out = np.empty((X.shape[0], means.shape[0]), dtype=np.float64)
    for start in range(0, X.shape[0], chunk_size):
        xb = X[start:start + chunk_size]
        d2 = np.einsum("ij,ij->i", xb, xb)[:, None] - 2.0 * (xb @ means.T) + mu_sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        out[start:start + chunk_size] = const - d2 * inv_two_var
    return out


def exact_log_scores(X, means, sigmas):
    """Scores of each row of ``X`` against the filter at the same row."""
    d2 = np.sum((np.asarray(X, dtype=np.float64) - means) ** 2, axis=1)
    return -HALF_LOG_2PI - np.log(sigmas) - d2 / (2.0 * sigmas**2)


class FilterBank:
    """An ordered, immutable collection of Gaussian filters sharing one patch shape.

    Parameters
    ----------
    means : array-like, shape (n_filters, patch_h * patch_w * channels)
        Flattened filter means (row-major ``(h, w, c)`` order).
    sigmas : array-like, shape (n_filters,)
    patch_shape : tuple of int
        ``(patch_h, patch_w, channels)``.
    """

    def __init__(self, means, sigmas, patch_shape):
        means = np.array(means, dtype=np.float64, ndmin=2)
        sigmas = np.array(sigmas, dtype=np.float64, ndmin=1)
        patch_shape = tuple(int(s) for s in patch_shape)
        if means.shape[0] != sigmas.shape[0]:
            raise ShapeError("means and sigmas disagree on the number of filters")
        if means.shape[1] != int(np.prod(patch_shape)):
            raise ShapeError(f"mean length {means.shape[1]} does not match patch shape {patch_shape}")
        if np.any(~(sigmas > 0)):
            raise ValueError("all sigmas must be positive")
        if not np.all(np.isfinite(means)):
            raise ValueError("filter means contain NaN or Inf")
        means.setflags(write=False)
        sigmas.setflags(write=False)
        self.means = means
        self.sigmas = sigmas
        self.patch_shape = patch_shape

    @classmethod
    def from_filters(cls, filters):
        filters = list(filters)
        if not filters:
            raise ValueError("cannot build a bank from zero filters")
        shape = np.asarray(filters[0].mu).shape
        if len(shape) == 1:
            shape = (1, 1, shape[0])
        means = [np.asarray(g.mu, dtype=np.float64).ravel() for g in filters]
        return cls(np.stack(means), [g.sigma for g in filters], shape)

    def __len__(self):
        return self.means.shape[0]

    def __getitem__(self, j):
        return GaussianFilter(self.means[j].reshape(self.patch_shape).copy(), float(self.sigmas[j]))

    def __iter__(self):
        return (self[j] for j in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, FilterBank):
            return NotImplemented
        return (
            self.patch_shape == other.patch_shape
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.sigmas, other.sigmas)
        )

    def __repr__(self):
        return f"FilterBank(n_filters={len(self)}, patch_shape={self.patch_shape})"

    @property
    def dim(self):
        return self.means.shape[1]

    def scores(self, X):
        """Similarity of every flattened patch row in ``X`` to every filter."""
        return log_scores(X, self.means, self.sigmas)

    def quantized(self):
        """Copy with every parameter rounded to the nearest float32 value."""
        return FilterBank(
            self.means.astype(np.float32).astype(np.float64),
            np.maximum(self.sigmas.astype(np.float32), np.float32(SIGMA_FLOOR)).astype(np.float64),
            self.patch_shape,
        )


def best_filter(x, bank):
    """Index and score of the most similar filter; ties go to the lowest index."""
    if len(bank) == 0:
        raise ValueError("filter bank is empty")
    x = np.asarray(x, dtype=np.float64)
    if x.size != bank.dim:
        raise ShapeError(f"patch of size {x.size} does not match filter size {bank.dim}")
    s = exact_log_scores(x.reshape(1, -1), bank.means, bank.sigmas)
    j = int(np.argmax(s))
    return j, float(s[j])


def sample_filter(g, delta2, rng):
    """Draw ``mu + delta2 * sigma * M`` with ``M`` elementwise standard normal."""
    if delta2 < 0:
        raise ValueError(f"delta2 must be non-negative, got {delta2}")
    mu = np.asarray(g.mu, dtype=np.float64)
    return mu + delta2 * g.sigma * rng.standard_normal(mu.shape)


def sample_bank(bank, delta2, rng):
    """One draw from every filter in ``bank``, shape ``(n_filters, dim)``."""
    if delta2 < 0:
        raise ValueError(f"delta2 must be non-negative, got {delta2}")
    noise = rng.standard_normal(bank.means.shape)
    return bank.means + delta2 * bank.sigmas[:, None] * noise
