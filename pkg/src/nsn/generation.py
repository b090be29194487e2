"""Top-down sampling from a trained network and noise-vector manipulation."""

from dataclasses import dataclass

import numpy as np

from ._validation import ShapeError
from .filters import sample_bank
from .tensor import PatchGrid, covered_extent, stitch_patches


@dataclass(frozen=True)
class GenConfig:
    """Sampling hyper-parameters.

    delta1 sharpens the filter-selection distribution, delta2 scales the
    per-filter noise and delta3 scales every generated patch.  ``n`` is the
    number of multinomial draws per grid cell.  With ``per_cell_noise`` the
    filter samples are redrawn for each cell instead of once per layer.
    """

    delta1: float = 1.0
    delta2: float = 1.0
    delta3: float = 1.0
    n: int = 10
    seed: int = 0
    per_cell_noise: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        for name in ("delta1", "delta2", "delta3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def rng(self):
        return np.random.default_rng(self.seed)


def selection_probs(v, delta1):
    """``exp(delta1 * v)`` normalised along the last axis (a stable softmax)."""
    z = delta1 * np.asarray(v, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def weight_vector(v, cfg, rng):
    """Normalised counts of ``cfg.n`` filter indices drawn from ``softmax(delta1 * v)``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise ValueError("v must be a finite vector")
    counts = rng.multinomial(cfg.n, selection_probs(v, cfg.delta1))
    return counts / cfg.n


def weight_map(F, cfg, rng):
    """Weight vectors for every cell of ``F``; shape ``(rows, cols, channels)``."""
    F = np.asarray(F, dtype=np.float64)
    if not np.all(np.isfinite(F)):
        raise ValueError("feature map contains NaN or Inf")
    p = selection_probs(F.reshape(-1, F.shape[-1]), cfg.delta1)
    counts = rng.multinomial(cfg.n, p)
    return (counts / cfg.n).reshape(F.shape)


def generate_feature_map(F, bank, spec, target_shape=None, cfg=GenConfig(), rng=None):
    """Reconstruct the map below a layer from that layer's map ``F``.

    Each cell of ``F`` yields a weight vector ``w``; its patch is
    ``delta3 * sum_j w_j * y_j`` with ``y_j`` a draw from filter ``j``.  The
    patches are stitched with overlap averaging into ``target_shape``
    (default: the extent the grid covers exactly).
    """
    if rng is None:
        rng = cfg.rng()
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 3 or F.shape[-1] != len(bank):
        raise ShapeError(f"feature map {F.shape} does not match a bank of {len(bank)} filters")
    rows, cols, n_filters = F.shape
    ph, pw, channels = bank.patch_shape
    if (ph, pw) != (spec.patch_h, spec.patch_w):
        raise ShapeError("layer spec and filter shape disagree")
    covered = (covered_extent(rows, ph, spec.stride), covered_extent(cols, pw, spec.stride), channels)
    if target_shape is None:
        target_shape = covered
    target_shape = tuple(target_shape)
    if target_shape != covered:
        raise ShapeError(f"a {rows}x{cols} grid tiles {covered}, not {target_shape}")

    W = weight_map(F, cfg, rng).reshape(rows * cols, n_filters)
    if cfg.per_cell_noise:
        out = np.empty((rows * cols, bank.dim))
        for cell in range(rows * cols):
            out[cell] = W[cell] @ sample_bank(bank, cfg.delta2, rng)
    else:
        out = W @ sample_bank(bank, cfg.delta2, rng)
    out *= cfg.delta3
    grid = PatchGrid(out.reshape(rows, cols, ph, pw, channels), spec.stride)
    return stitch_patches(grid, target_shape[0], target_shape[1])


def descend(net, F, from_layer, to_layer=0, cfg=GenConfig(), rng=None):
    """Run generation steps from ``F`` (the output of layer ``from_layer``,
    1-based) down to the output of layer ``to_layer`` (0 = input space)."""
    if rng is None:
        rng = cfg.rng()
    if not 0 <= to_layer <= from_layer <= net.n_layers:
        raise ValueError(f"cannot descend from layer {from_layer} to {to_layer}")
    for k in range(from_layer, to_layer, -1):
        F = generate_feature_map(F, net.banks[k - 1], net.specs[k - 1], None, cfg, rng)
    return F


def postprocess(net, t):
    """Map a generated input-space tensor back to pixels and clamp to [0, 1].

    Patches smaller than the full input cannot go through a whole-image
    inverse transform; for those a whitening preprocessor is skipped and
    the patch is contrast-stretched instead.
    """
    t = np.asarray(t, dtype=np.float64)
    pre = net.preprocessor
    if pre is not None:
        if t.shape == net.input_shape or not pre.needs_full_image:
            t = pre.inverse_transform(t[None])[0]
        else:
            lo, hi = t.min(), t.max()
            t = (t - lo) / (hi - lo) if hi > lo else np.zeros_like(t)
    return np.clip(t, 0.0, 1.0)


def _check_full_tiling(net):
    top = net.layer_shapes()
    h, w = 1, 1
    for spec in reversed(net.specs):
        h = covered_extent(h, spec.patch_h, spec.stride)
        w = covered_extent(w, spec.patch_w, spec.stride)
    if (h, w) != top[0][:2]:
        raise ShapeError(
            f"architecture tiles only {h}x{w} of the {top[0][0]}x{top[0][1]} input; "
            "generation needs exact coverage"
        )


def generate(net, z, cfg=GenConfig(), rng=None, raw=False):
    """Generate one image from a final-layer vector ``z`` of length N_L."""
    if net is None or not net.banks:
        raise ValueError("network is not trained")
    _check_full_tiling(net)
    if rng is None:
        rng = cfg.rng()
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size != net.n_filters[-1]:
        raise ShapeError(f"noise has length {z.size}, final layer has {net.n_filters[-1]} filters")
    out = descend(net, z.reshape(1, 1, -1), net.n_layers, 0, cfg, rng)
    return out if raw else postprocess(net, out)


def generate_batch(net, count, cfg=GenConfig(), rng=None):
    """``count`` images from standard-normal final-layer noise."""
    if rng is None:
        rng = cfg.rng()
    return np.stack([generate(net, rng.standard_normal(net.n_filters[-1]), cfg, rng) for _ in range(count)])


def receptive_field(net, k):
    """Input-space ``(h, w)`` seen by one cell of layer ``k`` (1-based)."""
    if not 1 <= k <= net.n_layers:
        raise ValueError(f"layer index must be in 1..{net.n_layers}, got {k}")
    h = w = 1
    for spec in reversed(net.specs[:k]):
        h = covered_extent(h, spec.patch_h, spec.stride)
        w = covered_extent(w, spec.patch_w, spec.stride)
    return h, w


def sample_hidden(net, k, cfg=GenConfig(), rng=None):
    """Sample a receptive-field sized patch starting from noise at layer ``k``."""
    if not 1 <= k <= net.n_layers:
        raise ValueError(f"layer index must be in 1..{net.n_layers}, got {k}")
    if rng is None:
        rng = cfg.rng()
    z = rng.standard_normal(net.n_filters[k - 1]).reshape(1, 1, -1)
    return postprocess(net, descend(net, z, k, 0, cfg, rng))


def noise_from_filter(j, n_filters):
    """One-hot final-layer vector selecting filter ``j``."""
    if not 0 <= j < n_filters:
        raise IndexError(f"filter index {j} out of range for {n_filters} filters")
    z = np.zeros(n_filters)
    z[j] = 1.0
    return z


def interpolate_noise(z_a, z_b, t):
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return (1.0 - t) * np.asarray(z_a, dtype=np.float64) + t * np.asarray(z_b, dtype=np.float64)


def feature_arithmetic(net, noises, coeffs, cfg=GenConfig(), rng=None, raw=False):
    """Combine the maps generated one step below the top and finish generation.

    Every noise vector is expanded to a map of layer L-1; the maps are mixed
    as ``sum(coeff_i * map_i)`` and the mixture is generated down to pixels.
    """
    noises = list(noises)
    coeffs = list(coeffs)
    if len(noises) != len(coeffs) or not noises:
        raise ValueError("need equally many (>= 1) noise vectors and coefficients")
    _check_full_tiling(net)
    if rng is None:
        rng = cfg.rng()
    L = net.n_layers
    combined = None
    for z, a in zip(noises, coeffs):
        z = np.asarray(z, dtype=np.float64).reshape(1, 1, -1)
        if z.shape[-1] != net.n_filters[-1]:
            raise ShapeError(f"noise has length {z.shape[-1]}, final layer has {net.n_filters[-1]} filters")
        F = descend(net, z, L, L - 1, cfg, rng)
        combined = a * F if combined is None else combined + a * F
    out = descend(net, combined, L - 1, 0, cfg, rng)
    return out if raw else postprocess(net, out)
