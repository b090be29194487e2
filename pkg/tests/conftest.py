import os

import numpy as np
import pytest

from nsn.data import load_idx
from nsn.filters import FilterBank
from nsn.network import ARCHITECTURES, Network
from nsn.training import EmConfig, default_layer_configs, train_network
from dataclasses import replace

DATA = os.path.join(os.path.dirname(__file__), "data")
MNIST_TRAIN = os.path.join(DATA, "mnist-2000-images-idx3-ubyte.gz")
MNIST_HELDOUT = os.path.join(DATA, "mnist-50-heldout-images-idx3-ubyte.gz")


def random_network(input_shape, arch, n_filters, seed=0):
    """Untrained network with random banks, for shape-only checks."""
    rng = np.random.default_rng(seed)
    banks, channels = [], input_shape[2]
    for spec, k in zip(arch, n_filters):
        shape = (spec.patch_h, spec.patch_w, channels)
        banks.append(FilterBank(rng.random((k, int(np.prod(shape)))), rng.uniform(0.5, 2.0, k), shape))
        channels = k
    return Network(list(arch), banks, input_shape)


def mnist_configs(max_iters=20, seed=0):
    cfgs = default_layer_configs(3, EmConfig(max_iters=max_iters, init_sigma="auto", seed=seed))
    return [replace(c, alpha_percentile=p) for c, p in zip(cfgs, (20.0, 10.0, 10.0))]


@pytest.fixture(scope="session")
def mnist():
    return load_idx(MNIST_TRAIN, expected_shape=(28, 28))


@pytest.fixture(scope="session")
def small_net(mnist):
    """A quickly trained MNIST network (200 images, few iterations)."""
    return train_network(mnist.images[:200], ARCHITECTURES["mnist"], mnist_configs(max_iters=5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
