import numpy as np
import pytest

import nsn.generation as gen
from conftest import random_network
from nsn._validation import ShapeError
from nsn.filters import FilterBank
from nsn.generation import (
    GenConfig, descend, feature_arithmetic, generate, generate_feature_map, interpolate_noise,
    noise_from_filter, receptive_field, sample_hidden, selection_probs, weight_map, weight_vector,
)
from nsn.network import ARCHITECTURES, LayerSpec


def test_uniform_weights_at_zero_delta1(rng):
    np.testing.assert_allclose(selection_probs(rng.normal(size=9), 0.0), np.full(9, 1 / 9))


def test_selection_probs_is_softmax(rng):
    v = rng.normal(size=6)
    e = np.exp(2.5 * v)
    np.testing.assert_allclose(selection_probs(v, 2.5), e / e.sum(), rtol=1e-12)


def test_selection_probs_stable_for_large_inputs():
    p = selection_probs(np.array([1000.0, 999.0]), 5.0)
    assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("n", [1, 3, 10, 57])
def test_weight_vector_sum_and_support(n, rng):
    for _ in range(50):
        v = rng.normal(size=20)
        w = weight_vector(v, GenConfig(delta1=rng.uniform(0, 5), n=n), rng)
        assert abs(w.sum() - 1.0) <= 1e-9
        assert np.count_nonzero(w) <= n
        assert np.all(w >= 0)


def test_weight_vector_law_of_large_numbers():
    rng = np.random.default_rng(0)
    v = np.array([0.1, 0.5, 0.2, 0.9, 0.3])
    cfg = GenConfig(delta1=3.0, n=100_000)
    w = weight_vector(v, cfg, rng)
    assert np.max(np.abs(w - selection_probs(v, 3.0))) < 0.01


def test_argmax_preserved_and_sharpened(rng):
    v = rng.normal(size=12)
    masses = []
    for d in (0.5, 1, 2, 4, 8):
        p = selection_probs(v, d)
        assert np.argmax(p) == np.argmax(v)
        masses.append(p[np.argmax(v)])
    assert all(b > a for a, b in zip(masses, masses[1:]))


def test_weight_map_cells(rng):
    F = rng.random((4, 5, 7))
    W = weight_map(F, GenConfig(n=6), rng)
    assert W.shape == F.shape
    np.testing.assert_allclose(W.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(np.count_nonzero(W, axis=-1) <= 6)


def _bank(rng, k=3, shape=(2, 2, 1)):
    return FilterBank(rng.random((k, int(np.prod(shape)))), rng.uniform(0.2, 1.0, k), shape)


def test_one_hot_weights_reproduce_mean(rng):
    bank = _bank(rng)
    F = np.zeros((3, 3, 3))
    F[..., 1] = 1.0
    # huge delta1 makes the weight vector one-hot on filter 1
    out = generate_feature_map(F, bank, LayerSpec(2, 2, 2), (6, 6, 1), GenConfig(1e6, 0.0, 1.0, 5), rng)
    np.testing.assert_array_equal(out, np.tile(bank.means[1].reshape(2, 2, 1), (3, 3, 1)))


def test_zero_delta3_gives_zero_map(rng):
    out = generate_feature_map(rng.random((3, 3, 3)), _bank(rng), LayerSpec(2, 2, 1), None,
                               GenConfig(delta3=0.0), rng)
    assert out.shape == (4, 4, 1)
    assert np.all(out == 0.0)


def test_single_cell_matches_scalar_oracle():
    bank = FilterBank([[1.0, 2.0], [10.0, 20.0]], [0.5, 2.0], (1, 2, 1))
    F = np.array([[[0.3, -0.4]]])
    cfg = GenConfig(delta1=1.7, delta2=0.9, delta3=1.3, n=4)
    out = generate_feature_map(F, bank, LayerSpec(1, 2, 1), (1, 2, 1), cfg, np.random.default_rng(42))
    # replay the same stream by hand
    rng = np.random.default_rng(42)
    p0 = np.exp(1.7 * 0.3) / (np.exp(1.7 * 0.3) + np.exp(1.7 * -0.4))
    counts = rng.multinomial(4, [[p0, 1 - p0]])[0]
    noise = rng.standard_normal((2, 2))
    w0, w1 = counts[0] / 4, counts[1] / 4
    y0 = [1.0 + 0.9 * 0.5 * noise[0, 0], 2.0 + 0.9 * 0.5 * noise[0, 1]]
    y1 = [10.0 + 0.9 * 2.0 * noise[1, 0], 20.0 + 0.9 * 2.0 * noise[1, 1]]
    expected = [1.3 * (w0 * y0[0] + w1 * y1[0]), 1.3 * (w0 * y0[1] + w1 * y1[1])]
    np.testing.assert_allclose(out[0, :, 0], expected, rtol=1e-12)


def test_feature_map_shape_checks(rng):
    bank = _bank(rng)
    with pytest.raises(ShapeError):
        generate_feature_map(rng.random((2, 2, 4)), bank, LayerSpec(2, 2, 2), None, GenConfig(), rng)
    with pytest.raises(ShapeError):
        generate_feature_map(rng.random((2, 2, 3)), bank, LayerSpec(2, 2, 2), (5, 5, 1), GenConfig(), rng)


def test_per_cell_noise_differs_across_cells(rng):
    bank = _bank(rng, k=1)
    F = np.ones((1, 2, 1))
    shared = generate_feature_map(F, bank, LayerSpec(2, 2, 2), None, GenConfig(per_cell_noise=False), rng)
    np.testing.assert_array_equal(shared[:, :2], shared[:, 2:])
    per_cell = generate_feature_map(F, bank, LayerSpec(2, 2, 2), None, GenConfig(per_cell_noise=True), rng)
    assert not np.array_equal(per_cell[:, :2], per_cell[:, 2:])


def test_generate_mnist_shape():
    net = random_network((28, 28, 1), ARCHITECTURES["mnist"], [5, 6, 7])
    img = generate(net, np.random.default_rng(0).standard_normal(7), GenConfig())
    assert img.shape == (28, 28, 1)
    assert np.all((img >= 0) & (img <= 1))


def test_generate_64_shape():
    net = random_network((64, 64, 3), ARCHITECTURES["64"], [4, 5, 6, 7, 8])
    assert generate(net, np.zeros(8), GenConfig()).shape == (64, 64, 3)


def test_generate_deterministic(small_net):
    z = np.random.default_rng(1).standard_normal(small_net.n_filters[-1])
    cfg = GenConfig(delta1=5.0, seed=9)
    np.testing.assert_array_equal(generate(small_net, z, cfg), generate(small_net, z, cfg))


def test_generate_rejects_wrong_noise_length(small_net):
    with pytest.raises(ShapeError):
        generate(small_net, np.zeros(small_net.n_filters[-1] + 1))


def test_delta2_zero_removes_sample_noise(small_net):
    # same weight maps (same stream, one-hot noise, large delta1) give identical output
    cfg = GenConfig(delta1=1e4, delta2=0.0, seed=1)
    z = noise_from_filter(0, small_net.n_filters[-1])
    a = generate(small_net, z, cfg, np.random.default_rng(1))
    b = generate(small_net, z, cfg, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)
    top = small_net.banks[-1]
    F = descend(small_net, z.reshape(1, 1, -1), 3, 2, cfg, np.random.default_rng(5))
    np.testing.assert_array_equal(F, top.means[0].reshape(top.patch_shape))


def test_receptive_fields(small_net):
    assert receptive_field(small_net, 1) == (4, 4)
    assert receptive_field(small_net, 2) == (8, 8)
    assert receptive_field(small_net, 3) == (28, 28)


def test_sample_hidden_shapes(small_net):
    assert sample_hidden(small_net, 1, GenConfig(), np.random.default_rng(0)).shape == (4, 4, 1)
    assert sample_hidden(small_net, 2, GenConfig(), np.random.default_rng(0)).shape == (8, 8, 1)
    with pytest.raises(ValueError):
        sample_hidden(small_net, 4)
    with pytest.raises(ValueError):
        sample_hidden(small_net, 0)


def test_sample_hidden_top_equals_generate(small_net):
    cfg = GenConfig(delta1=3.0)
    a = sample_hidden(small_net, 3, cfg, np.random.default_rng(4))
    rng = np.random.default_rng(4)
    z = rng.standard_normal(small_net.n_filters[-1])
    np.testing.assert_array_equal(a, generate(small_net, z, cfg, rng))


def test_noise_from_filter():
    np.testing.assert_array_equal(noise_from_filter(0, 3), [1, 0, 0])
    np.testing.assert_array_equal(noise_from_filter(2, 3), [0, 0, 1])
    with pytest.raises(IndexError):
        noise_from_filter(3, 3)


def test_one_hot_noise_concentrates_top_weights(rng):
    v = noise_from_filter(4, 10)
    w = weight_vector(v, GenConfig(delta1=50.0, n=1000), rng)
    assert w[4] == 1.0


def test_interpolate_noise():
    a, b = noise_from_filter(0, 4), noise_from_filter(1, 4)
    np.testing.assert_array_equal(interpolate_noise(a, b, 0.0), a)
    np.testing.assert_array_equal(interpolate_noise(a, b, 1.0), b)
    np.testing.assert_array_equal(interpolate_noise(a, b, 0.5), [0.5, 0.5, 0, 0])


def test_arithmetic_combination_rule(small_net, monkeypatch):
    seen = []
    real = gen.descend

    def spy(net, F, from_layer, to_layer=0, cfg=GenConfig(), rng=None):
        out = real(net, F, from_layer, to_layer, cfg, rng)
        seen.append((from_layer, to_layer, F, out))
        return out

    monkeypatch.setattr(gen, "descend", spy)
    N = small_net.n_filters[-1]
    zs = [noise_from_filter(j, N) for j in (0, 1, 2 % N)]
    feature_arithmetic(small_net, zs, [1, 1, -1], GenConfig(delta1=2.0), np.random.default_rng(0))
    maps = [out for (f, t, _, out) in seen if (f, t) == (3, 2)]
    combined = [F for (f, t, F, _) in seen if (f, t) == (2, 0)][0]
    np.testing.assert_allclose(combined, maps[0] + maps[1] - maps[2])


def test_arithmetic_single_operand_is_plain_generation(small_net):
    z = noise_from_filter(0, small_net.n_filters[-1])
    cfg = GenConfig(delta1=2.0)
    a = feature_arithmetic(small_net, [z], [1.0], cfg, np.random.default_rng(3))
    b = generate(small_net, z, cfg, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_arithmetic_zero_coeffs_finite(small_net):
    N = small_net.n_filters[-1]
    out = feature_arithmetic(small_net, [noise_from_filter(0, N)] * 2, [0.0, 0.0], GenConfig())
    assert np.all(np.isfinite(out)) and np.all((out >= 0) & (out <= 1))


def test_arithmetic_length_mismatch(small_net):
    with pytest.raises(ValueError):
        feature_arithmetic(small_net, [np.zeros(small_net.n_filters[-1])], [1.0, 2.0])


def test_images_valid_over_delta_grid(small_net):
    z = np.random.default_rng(2).standard_normal(small_net.n_filters[-1])
    for d1 in np.linspace(0, 50, 10):
        for d2 in np.linspace(0, 3, 10):
            img = generate(small_net, z, GenConfig(delta1=d1, delta2=d2, delta3=1.0, n=5))
            assert np.all(np.isfinite(img)) and img.min() >= 0 and img.max() <= 1


def test_weight_maps_valid_during_generation(small_net, monkeypatch):
    cfg = GenConfig(delta1=3.0, n=7)
    maps = []
    real = gen.weight_map

    def spy(F, cfg, rng):
        W = real(F, cfg, rng)
        maps.append(W)
        return W

    monkeypatch.setattr(gen, "weight_map", spy)
    generate(small_net, np.random.default_rng(0).standard_normal(small_net.n_filters[-1]), cfg)
    assert len(maps) == 3
    for W in maps:
        np.testing.assert_allclose(W.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(np.count_nonzero(W, axis=-1) <= 7)


def test_gen_config_validation():
    with pytest.raises(ValueError):
        GenConfig(n=0)
    with pytest.raises(ValueError):
        GenConfig(delta2=-1.0)
