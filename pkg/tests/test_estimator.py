import numpy as np
import pytest
from sklearn.base import clone

from nsn.estimator import HardEMFilterBank, NormalSimilarityNetwork, _per_layer


def blobs(seed=0):
    rng = np.random.default_rng(seed)
    centres = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]])
    return np.concatenate([c + 0.3 * rng.standard_normal((40, 2)) for c in centres])


def test_filter_bank_estimator_params_and_clone():
    est = HardEMFilterBank(alpha=-20.0, max_iter=7)
    assert est.get_params()["max_iter"] == 7
    c = clone(est)
    assert c.get_params() == est.get_params() and c is not est


def test_filter_bank_estimator_fit_predict():
    X = blobs()
    est = HardEMFilterBank(alpha=-20.0, init_sigma=1.0).fit(X)
    assert est.n_filters_ == 3
    labels = est.predict(X)
    for block in range(3):
        assert len(set(labels[block * 40:(block + 1) * 40])) == 1
    np.testing.assert_array_equal(labels, est.labels_)
    T = est.transform(X)
    assert T.shape == (120, 3) and np.all((T > 0) & (T < 1))
    assert est.score_samples(X).shape == (120,)
    obj = est.objective_history_
    assert all(b >= a - 1e-9 for a, b in zip(obj, obj[1:]))


def test_network_estimator(mnist):
    X = mnist.images[:60]
    est = NormalSimilarityNetwork(max_iter=3, random_state=0, delta1=20.0, delta2=0.0)
    assert clone(est).get_params() == est.get_params()
    est.fit(X)
    assert len(est.n_filters_) == 3
    Z = est.transform(X[:5])
    assert Z.shape == (5, est.n_filters_[-1])
    S = est.sample(3, seed=1)
    assert S.shape == (3, 28, 28, 1) and np.all((S >= 0) & (S <= 1))
    np.testing.assert_array_equal(S, est.sample(3, seed=1))
    assert est.sample_filter(0, 2).shape == (2, 28, 28, 1)


def test_network_estimator_2d_input(mnist):
    X = mnist.images[:30, :, :, 0]
    est = NormalSimilarityNetwork(max_iter=2).fit(X)
    assert est.transform(X[:2]).shape[0] == 2


def test_per_layer():
    assert _per_layer(None, 3) == [None] * 3
    assert _per_layer(2.0, 2) == [2.0, 2.0]
    assert _per_layer([1, 2], 4) == [1, 2, 2, 2]
    with pytest.raises(ValueError):
        _per_layer([], 2)
