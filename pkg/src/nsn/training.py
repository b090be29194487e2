"""Non-parametric hard EM for a single filter bank and the layer-wise driver."""

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from ._validation import ShapeError, check_images
from .filters import HALF_LOG_2PI, SIGMA_FLOOR, FilterBank, exact_log_scores
from .network import Network, check_arch, forward_layer_batch
from .tensor import extract_patch_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmConfig:
    """Settings for one layer's EM run.

    ``alpha`` is an absolute log-density threshold; ``None`` means calibrate
    it from the data with ``alpha_percentile``.  ``alpha = -inf`` disables
    spawning.  ``init_sigma`` is the spread given to the first and to every
    spawned filter; ``"auto"`` uses the RMS deviation of all patches from
    their mean.  ``patch_subsample`` is the number of patches drawn per image
    (0 keeps all of them).
    """

    alpha: float = None
    alpha_percentile: float = 2.0
    max_iters: int = 20
    convergence_frac: float = 0.001
    sigma_floor: float = SIGMA_FLOOR
    init_sigma: float = 1.0
    max_filters: int = 1000
    patch_subsample: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.max_filters < 1:
            raise ValueError("max_filters must be >= 1")
        if not 0.0 < self.convergence_frac < 1.0:
            raise ValueError("convergence_frac must lie in (0, 1)")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")
        if self.init_sigma != "auto" and not float(self.init_sigma) > 0:
            raise ValueError("init_sigma must be positive or 'auto'")


@dataclass
class Assignment:
    labels: np.ndarray
    scores: np.ndarray
    n_spawned: int = 0


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    n_filters: int
    objective: float
    changed_frac: float
    n_spawned: int


def _global_fit(X):
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    d2 = np.empty(len(X))
    for start in range(0, len(X), 16384):
        d2[start:start + 16384] = np.sum((X[start:start + 16384] - mu) ** 2, axis=1)
    sigma = max(np.sqrt(d2.mean()), SIGMA_FLOOR)
    return sigma, -HALF_LOG_2PI - np.log(sigma) - d2 / (2.0 * sigma**2)


def calibrate_alpha(X, percentile=2.0):
    """Propose a spawn threshold from the data.

    Fits a single filter to every patch (global mean, RMS deviation) and
    returns the given percentile of the resulting scores.
    """
    _, scores = _global_fit(X)
    return float(np.percentile(scores, percentile))


def e_step(X, bank, alpha, max_filters=None, init_sigma=1.0):
    """Assign each patch to its best filter, spawning filters below ``alpha``.

    Patches are visited in order; a patch whose best score is under the
    threshold founds a new filter centred on itself, and that filter is
    visible to every later patch in the same pass.  Spawning stops silently
    once the bank holds ``max_filters`` filters.

    Returns ``(assignment, bank)`` where ``bank`` includes any new filters.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != bank.dim:
        raise ShapeError(f"patch dimension {X.shape[1]} does not match filters ({bank.dim})")
    n_old = len(bank)
    if max_filters is None:
        max_filters = np.inf
    S = bank.scores(X)
    labels = np.argmax(S, axis=1)
    best = S[np.arange(len(X)), labels]
    del S
    if not alpha > -np.inf:
        return Assignment(labels, best, 0), bank

    below = np.flatnonzero(best < alpha)
    room = int(min(max_filters - n_old, len(below))) if np.isfinite(max_filters) else len(below)
    if room <= 0 or len(below) == 0:
        return Assignment(labels, best, 0), bank

    spawn_score = -HALF_LOG_2PI - np.log(init_sigma)
    new_means = np.empty((room, X.shape[1]), dtype=np.float64)
    spawned_at = np.empty(room, dtype=np.int64)
    m = 0
    inv_two_var = 0.5 / init_sigma**2
    for i in below:
        x = X[i]
        if m:
            d2 = np.sum((new_means[:m] - x) ** 2, axis=1)
            j = int(np.argmin(d2))
            s = spawn_score - d2[j] * inv_two_var
            if s > best[i]:
                labels[i] = n_old + j
                best[i] = s
        if best[i] < alpha and m < room:
            new_means[m] = x
            spawned_at[m] = i
            labels[i] = n_old + m
            best[i] = spawn_score
            m += 1
    if m == 0:
        return Assignment(labels, best, 0), bank

    new_means = new_means[:m]
    spawned_at = spawned_at[:m]
    # Patches above threshold may still prefer a filter spawned earlier in the pass.
    is_below = np.zeros(len(X), dtype=bool)
    is_below[below] = True
    rest = np.flatnonzero(~is_below & (np.arange(len(X)) > spawned_at[0]))
    if len(rest):
        S_new = FilterBank(new_means, np.full(m, init_sigma), bank.patch_shape).scores(X[rest])
        S_new[spawned_at[None, :] > rest[:, None]] = -np.inf
        j = np.argmax(S_new, axis=1)
        s = S_new[np.arange(len(rest)), j]
        better = s > best[rest]
        labels[rest[better]] = n_old + j[better]
        best[rest[better]] = s[better]

    grown = FilterBank(
        np.vstack([bank.means, new_means]),
        np.concatenate([bank.sigmas, np.full(m, init_sigma)]),
        bank.patch_shape,
    )
    return Assignment(labels, best, m), grown


def _cluster_sums(X, labels, n_clusters):
    onehot = sp.csr_matrix(
        (np.ones(len(labels)), (labels, np.arange(len(labels)))),
        shape=(n_clusters, len(labels)),
    )
    return onehot @ X


def m_step(X, assignment, bank, sigma_floor=SIGMA_FLOOR, chunk_size=16384):
    """Closed-form update of every filter from its assigned patches.

    Each mean becomes the average of its patches and each sigma the RMS
    distance to the new mean, floored at ``sigma_floor``.  Filters with no
    patches are dropped and the remaining indices compacted.

    Returns ``(bank, kept)`` where ``kept`` lists the surviving old indices.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(assignment.labels if isinstance(assignment, Assignment) else assignment)
    K = len(bank)
    if labels.size and labels.max() >= K:
        raise ValueError("assignment refers to filters outside the bank")
    counts = np.bincount(labels, minlength=K)
    kept = np.flatnonzero(counts)
    means = np.asarray(_cluster_sums(X, labels, K))[kept] / counts[kept, None]

    remap = np.full(K, -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    new_labels = remap[labels]
    sq = np.empty(len(X), dtype=np.float64)
    for start in range(0, len(X), chunk_size):
        sl = slice(start, start + chunk_size)
        sq[sl] = np.sum((X[sl] - means[new_labels[sl]]) ** 2, axis=1)
    var = np.bincount(new_labels, weights=sq, minlength=len(kept)) / counts[kept]
    sigmas = np.maximum(np.sqrt(var), sigma_floor)
    return FilterBank(means, sigmas, bank.patch_shape), kept


def objective(X, labels, bank):
    """Sum over patches of the score under the assigned filter."""
    X = np.asarray(X, dtype=np.float64)
    total = 0.0
    for start in range(0, len(X), 16384):
        sl = slice(start, start + 16384)
        lab = labels[sl]
        total += float(np.sum(exact_log_scores(X[sl], bank.means[lab], bank.sigmas[lab])))
    return total


def run_em(X, cfg, bank=None):
    """Alternate E and M steps until few assignments change.

    Returns ``(bank, labels, alpha, history, init_sigma)``; ``history``
    holds one ``IterationRecord`` per iteration with the objective measured
    after the M-step.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a non-empty (n_patches, dim) patch matrix")
    rng = np.random.default_rng(cfg.seed)
    alpha = cfg.alpha
    init_sigma = cfg.init_sigma
    if alpha is None or init_sigma == "auto":
        global_sigma, global_scores = _global_fit(X)
        if alpha is None:
            alpha = float(np.percentile(global_scores, cfg.alpha_percentile))
        if init_sigma == "auto":
            init_sigma = global_sigma
        del global_scores
    init_sigma = float(init_sigma)
    if bank is None:
        seed_patch = X[rng.integers(len(X))]
        bank = FilterBank(seed_patch[None, :], [init_sigma], (1, 1, X.shape[1]))

    history = []
    prev = None
    labels = None
    for it in range(1, cfg.max_iters + 1):
        asg, bank = e_step(X, bank, alpha, cfg.max_filters, init_sigma)
        changed = 1.0 if prev is None else float(np.mean(asg.labels != prev))
        n_before = len(bank)
        bank, kept = m_step(X, asg, bank, cfg.sigma_floor)
        remap = np.full(n_before, -1, dtype=np.int64)
        remap[kept] = np.arange(len(kept))
        labels = remap[asg.labels]
        obj = objective(X, labels, bank)
        rec = IterationRecord(it, len(bank), obj, changed, asg.n_spawned)
        history.append(rec)
        logger.info(
            "iter %d filters %d objective %.6f changed %.5f spawned %d",
            rec.iteration, rec.n_filters, rec.objective, rec.changed_frac, rec.n_spawned,
        )
        prev = labels
        if changed < cfg.convergence_frac:
            break
    return bank, labels, alpha, history, init_sigma


def train_layer(patches, cfg=EmConfig(), return_history=False):
    """Learn a filter bank for ``patches``.

    ``patches`` is either an ``(n, dim)`` matrix or an ``(n, h, w, c)`` stack;
    in the latter case the returned bank carries the ``(h, w, c)`` shape.
    """
    patches = np.asarray(patches, dtype=np.float64)
    shape = None
    if patches.ndim == 4:
        shape = patches.shape[1:]
        patches = patches.reshape(len(patches), -1)
    bank, labels, alpha, history, _ = run_em(patches, cfg)
    if shape is not None:
        bank = FilterBank(bank.means, bank.sigmas, shape)
    if return_history:
        return bank, history
    return bank


def _layer_patches(feature_maps, spec, n_per_image, rng):
    X = extract_patch_matrix(feature_maps, spec.patch_h, spec.patch_w, spec.stride)
    n, per_image, dim = X.shape
    if n_per_image and n_per_image < per_image:
        idx = np.stack([rng.choice(per_image, n_per_image, replace=False) for _ in range(n)])
        idx.sort(axis=1)
        X = np.take_along_axis(X, idx[:, :, None], axis=1)
    return X.reshape(-1, dim)


def default_layer_configs(n_layers, base=EmConfig(), first_layer_subsample=64):
    """Per-layer configs: subsample the first layer, use every patch deeper down."""
    cfgs = []
    for k in range(n_layers):
        cfgs.append(replace(base, seed=base.seed + k, patch_subsample=first_layer_subsample if k == 0 else 0))
    return cfgs


def train_network(images, arch, cfgs=None, preprocessor=None, metadata=None):
    """Train every layer in turn on the outputs of the layers below it.

    ``images`` are ``(n, H, W[, C])`` pixels in ``[0, 1]``; ``preprocessor``
    (already fitted) maps them into the training domain.  ``cfgs`` is one
    ``EmConfig`` per layer or a single config used as the base for
    ``default_layer_configs``.
    """
    images = check_images(images)
    arch = list(arch)
    check_arch(images.shape[1:3], arch)
    if cfgs is None or isinstance(cfgs, EmConfig):
        cfgs = default_layer_configs(len(arch), cfgs or EmConfig())
    if len(cfgs) != len(arch):
        raise ValueError("need one EmConfig per layer")

    mean_image = images.mean(axis=0)
    t = preprocessor.transform(images) if preprocessor is not None else images
    banks, layer_info = [], []
    for k, (spec, cfg) in enumerate(zip(arch, cfgs)):
        rng = np.random.default_rng([cfg.seed, k])
        X = _layer_patches(t, spec, cfg.patch_subsample, rng)
        logger.info("layer %d: %d patches of dimension %d", k + 1, X.shape[0], X.shape[1])
        bank, _, alpha, history, init_sigma = run_em(X, cfg)
        del X
        bank = FilterBank(bank.means, bank.sigmas, (spec.patch_h, spec.patch_w, t.shape[-1])).quantized()
        banks.append(bank)
        layer_info.append({
            "alpha": alpha,
            "init_sigma": init_sigma,
            "n_filters": len(bank),
            "iterations": len(history),
            "final_objective": history[-1].objective,
            "seed": cfg.seed,
            "max_filters": cfg.max_filters,
            "patch_subsample": cfg.patch_subsample,
        })
        logger.info("layer %d: %d filters after %d iterations", k + 1, len(bank), len(history))
        t = forward_layer_batch(t, spec, bank)

    meta = dict(metadata or {})
    meta["layers"] = layer_info
    return Network(
        specs=arch,
        banks=banks,
        input_shape=images.shape[1:],
        preprocessor=preprocessor,
        mean_image=mean_image.astype(np.float32).astype(np.float64),
        metadata=meta,
    )
