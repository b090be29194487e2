"""scikit-learn compatible wrappers around the training and generation code."""

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_images
from .data import make_preprocessor
from .filters import SIGMA_FLOOR
from .generation import GenConfig, generate, noise_from_filter
from .network import forward_batch, parse_arch
from .tensor import sigmoid_map
from .training import EmConfig, default_layer_configs, run_em, train_network


class HardEMFilterBank(ClusterMixin, TransformerMixin, BaseEstimator):
    """Non-parametric hard EM over flat patch vectors.

    The number of filters is discovered from the data: a patch whose best
    log-density score falls below ``alpha`` starts a new filter.

    Attributes
    ----------
    bank_ : FilterBank
    labels_ : ndarray of shape (n_samples,)
    alpha_ : float
        Threshold actually used (calibrated when ``alpha`` is None).
    objective_history_ : list of float
    n_filters_ : int
    """

    def __init__(self, alpha=None, alpha_percentile=2.0, max_iter=20, convergence_frac=1e-3,
                 sigma_floor=SIGMA_FLOOR, init_sigma=1.0, max_filters=1000, random_state=0):
        self.alpha = alpha
        self.alpha_percentile = alpha_percentile
        self.max_iter = max_iter
        self.convergence_frac = convergence_frac
        self.sigma_floor = sigma_floor
        self.init_sigma = init_sigma
        self.max_filters = max_filters
        self.random_state = random_state

    def _config(self):
        return EmConfig(
            alpha=self.alpha, alpha_percentile=self.alpha_percentile, max_iters=self.max_iter,
            convergence_frac=self.convergence_frac, sigma_floor=self.sigma_floor,
            init_sigma=self.init_sigma, max_filters=self.max_filters, seed=self.random_state,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        bank, labels, alpha, history, init_sigma = run_em(X, self._config())
        self.bank_ = bank
        self.labels_ = labels
        self.alpha_ = alpha
        self.init_sigma_ = init_sigma
        self.history_ = history
        self.objective_history_ = [rec.objective for rec in history]
        self.n_iter_ = len(history)
        self.n_filters_ = len(bank)
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        """Best filter score of each sample."""
        check_is_fitted(self, "bank_")
        return self.bank_.scores(check_array(X, dtype=np.float64)).max(axis=1)

    def predict(self, X):
        check_is_fitted(self, "bank_")
        return np.argmax(self.bank_.scores(check_array(X, dtype=np.float64)), axis=1)

    def transform(self, X):
        """Sigmoid activations, one column per filter."""
        check_is_fitted(self, "bank_")
        return sigmoid_map(self.bank_.scores(check_array(X, dtype=np.float64)))


class NormalSimilarityNetwork(TransformerMixin, BaseEstimator):
    """Layer-wise trained stack of Gaussian filter banks with a sampler.

    ``fit`` takes images shaped ``(n, H, W)`` or ``(n, H, W, C)`` with pixels in
    ``[0, 1]``.  ``transform`` returns the final 1x1 activations as an
    ``(n, n_filters)`` matrix and ``sample`` draws new images.

    Parameters
    ----------
    arch : str or list of LayerSpec
        ``"mnist"``, ``"64"`` or a string such as ``"4x4/2,3x3/2,6x6/2"``.
    alpha : float, list or None
        Spawn threshold per layer; ``None`` calibrates from
        ``alpha_percentile``.
    alpha_percentile : float or list
        Per-layer percentiles; the last entry repeats for deeper layers.
    init_sigma : float or "auto"
    preprocessing : {"none", "normalize", "zca"}
    """

    def __init__(self, arch="mnist", alpha=None, alpha_percentile=(20.0, 10.0, 10.0), max_iter=20,
                 convergence_frac=1e-3, max_filters=1000, init_sigma="auto", patch_subsample=64,
                 preprocessing="none", zca_epsilon=1e-2, delta1=1.0, delta2=1.0, delta3=1.0,
                 n_draws=10, random_state=0):
        self.arch = arch
        self.alpha = alpha
        self.alpha_percentile = alpha_percentile
        self.max_iter = max_iter
        self.convergence_frac = convergence_frac
        self.max_filters = max_filters
        self.init_sigma = init_sigma
        self.patch_subsample = patch_subsample
        self.preprocessing = preprocessing
        self.zca_epsilon = zca_epsilon
        self.delta1 = delta1
        self.delta2 = delta2
        self.delta3 = delta3
        self.n_draws = n_draws
        self.random_state = random_state

    def _specs(self):
        return parse_arch(self.arch) if isinstance(self.arch, str) else list(self.arch)

    def layer_configs(self):
        specs = self._specs()
        base = EmConfig(
            max_iters=self.max_iter, convergence_frac=self.convergence_frac,
            max_filters=self.max_filters, init_sigma=self.init_sigma, seed=self.random_state,
        )
        cfgs = default_layer_configs(len(specs), base, self.patch_subsample)
        alphas = _per_layer(self.alpha, len(specs))
        pcts = _per_layer(self.alpha_percentile, len(specs))
        return [replace(c, alpha=a, alpha_percentile=p) for c, a, p in zip(cfgs, alphas, pcts)]

    def gen_config(self, seed=None):
        return GenConfig(self.delta1, self.delta2, self.delta3, self.n_draws,
                         self.random_state if seed is None else seed)

    def fit(self, X, y=None):
        X = check_images(X)
        pre = make_preprocessor(self.preprocessing, epsilon=self.zca_epsilon)
        if pre is not None:
            pre = pre.fit(X).quantized()
        meta = {
            "preprocessing": self.preprocessing,
            "gen_defaults": {"delta1": self.delta1, "delta2": self.delta2,
                             "delta3": self.delta3, "n": self.n_draws},
            "seed": self.random_state,
        }
        self.network_ = train_network(X, self._specs(), self.layer_configs(), pre, meta)
        self.n_filters_ = self.network_.n_filters
        return self

    def transform(self, X):
        check_is_fitted(self, "network_")
        net = self.network_
        out = forward_batch(net, net.preprocess(check_images(X)))
        return out.reshape(len(out), -1)

    def sample(self, n_samples=1, seed=None):
        """Generate ``n_samples`` images from standard-normal final-layer noise."""
        check_is_fitted(self, "network_")
        cfg = self.gen_config(seed)
        rng = cfg.rng()
        n_top = self.network_.n_filters[-1]
        return np.stack([generate(self.network_, rng.standard_normal(n_top), cfg, rng)
                         for _ in range(n_samples)])

    def sample_filter(self, j, n_samples=1, seed=None):
        """Images generated from a one-hot final-layer vector on filter ``j``."""
        check_is_fitted(self, "network_")
        cfg = self.gen_config(seed)
        rng = cfg.rng()
        z = noise_from_filter(j, self.network_.n_filters[-1])
        return np.stack([generate(self.network_, z, cfg, rng) for _ in range(n_samples)])


def _per_layer(value, n):
    if value is None or np.isscalar(value):
        return [value] * n
    value = list(value)
    if not value:
        raise ValueError("empty per-layer value list")
    # the last entry repeats for any deeper layers
    return (value + value[-1:] * n)[:n]
