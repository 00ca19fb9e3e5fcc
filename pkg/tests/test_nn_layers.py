"""Layer-level forward semantics and gradient correctness."""

import numpy as np
import pytest

import cellgrade.nn as nn
from cellgrade.errors import ConfigError
from cellgrade.prng import SeededPrng

RNG = np.random.default_rng(2024)


def micro_net(*layers, input_shape=(6, 6, 3)):
    return nn.NetworkSpec(input_shape, tuple(layers))


def check_gradients(net, batch=3, sample_count=25, h=1e-5, tol=1e-4, seed=5):
    params = nn.init_params(net, seed, dtype=np.float64)
    rng = SeededPrng(seed + 1)
    x = rng.uniform((batch,) + tuple(net.input_shape))
    y = np.arange(batch) % 2
    report = nn.gradient_check(net, params, x, y, sample_count=sample_count, h=h, seed=seed + 2)
    assert report.max_rel_err < tol, report.per_layer
    return report


# -- conv -------------------------------------------------------------------

def test_conv_1x1_identity_kernel():
    x = RNG.uniform(size=(2, 4, 4, 1))
    kernel = np.ones((1, 1, 1, 1))
    y, _ = nn.conv2d_forward(x, kernel, np.zeros(1), (1, 1))
    np.testing.assert_array_equal(y, x)


def test_conv_full_window_sum():
    x = RNG.uniform(size=(1, 3, 3, 1))
    kernel = np.ones((3, 3, 1, 1))
    y, _ = nn.conv2d_forward(x, kernel, np.zeros(1), (1, 1))
    assert y.shape == (1, 1, 1, 1)
    np.testing.assert_allclose(y[0, 0, 0, 0], x.sum(), rtol=1e-12)


def test_conv_bias_add():
    x = np.zeros((1, 3, 3, 2))
    kernel = np.zeros((2, 2, 2, 3))
    y, _ = nn.conv2d_forward(x, kernel, np.array([1.0, 2.0, 3.0]), (1, 1))
    np.testing.assert_array_equal(y[0, 0, 0], [1.0, 2.0, 3.0])


def test_conv_gradients_vs_finite_differences():
    net = micro_net(nn.Conv2D(3, (3, 3), (1, 1)), nn.Flatten(), nn.Dense(2),
                    input_shape=(8, 8, 2))
    check_gradients(net)


def test_conv_strided_gradients():
    net = micro_net(nn.Conv2D(4, (3, 3), (2, 2)), nn.Flatten(), nn.Dense(2),
                    input_shape=(9, 9, 3))
    check_gradients(net)


# -- batch norm ---------------------------------------------------------------

def test_batch_norm_normalizes_in_train_mode():
    x = RNG.normal(loc=3.0, scale=2.0, size=(8, 5, 5, 4))
    gamma, beta = np.ones(4), np.zeros(4)
    y, _, _ = nn.batch_norm_forward_train(x, gamma, beta, np.zeros(4), np.ones(4), 1e-3, 0.99)
    mean = y.mean(axis=(0, 1, 2))
    var = y.var(axis=(0, 1, 2))
    assert np.all(np.abs(mean) < 1e-5)
    assert np.all(np.abs(var - 1.0) < 1e-3)


def test_batch_norm_eval_identity_statistics():
    x = RNG.normal(size=(4, 3, 3, 2))
    y = nn.batch_norm_forward_eval(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), 1e-3)
    np.testing.assert_allclose(y, x, atol=2e-3)


def test_batch_norm_updates_moving_statistics():
    x = RNG.normal(loc=5.0, size=(16, 2, 2, 1))
    _, _, (new_mean, new_var) = nn.batch_norm_forward_train(
        x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), 1e-3, 0.9)
    expected_mean = 0.9 * 0.0 + 0.1 * x.mean()
    expected_var = 0.9 * 1.0 + 0.1 * x.var()
    np.testing.assert_allclose(new_mean, [expected_mean], rtol=1e-6)
    np.testing.assert_allclose(new_var, [expected_var], rtol=1e-6)


def test_batch_norm_rejects_batch_of_one():
    with pytest.raises(ConfigError, match=">= 2"):
        nn.batch_norm_forward_train(np.zeros((1, 2, 2, 3)), np.ones(3), np.zeros(3),
                                    np.zeros(3), np.ones(3), 1e-3, 0.99)


def test_batch_norm_gradients_vs_finite_differences():
    net = micro_net(nn.Conv2D(3, (3, 3)), nn.BatchNorm(3), nn.Flatten(), nn.Dense(2),
                    input_shape=(6, 6, 2))
    check_gradients(net, batch=4)


# -- dropout ------------------------------------------------------------------

def test_dropout_rate_zero_is_identity():
    x = RNG.uniform(size=(4, 7))
    y, mask = nn.dropout_forward(x, 0.0, "train", SeededPrng(1))
    np.testing.assert_array_equal(y, x)
    assert mask.all()


def test_dropout_eval_is_identity():
    x = RNG.uniform(size=(4, 7))
    y, mask = nn.dropout_forward(x, 0.9, "eval", None)
    np.testing.assert_array_equal(y, x)
    assert mask.all()


def test_dropout_mean_preservation_and_reproducibility():
    x = np.ones((100, 100))
    y, mask = nn.dropout_forward(x, 0.5, "train", SeededPrng(77))
    assert abs(y.mean() - 1.0) < 0.05
    survivors = mask.mean()
    assert 0.45 < survivors < 0.55
    y2, mask2 = nn.dropout_forward(x, 0.5, "train", SeededPrng(77))
    np.testing.assert_array_equal(y, y2)
    np.testing.assert_array_equal(mask, mask2)


# -- pooling ------------------------------------------------------------------

def test_pool_window_example():
    window = np.array([[1.0, 3.0], [2.0, 9.0]]).reshape(1, 2, 2, 1)
    y_max, _ = nn.max_pool_forward(window, (2, 2), (2, 2))
    y_avg, _ = nn.avg_pool_forward(window, (2, 2), (2, 2))
    assert y_max[0, 0, 0, 0] == 9.0
    assert y_avg[0, 0, 0, 0] == 3.75


def test_pooling_constant_input():
    x = np.full((2, 4, 4, 3), 0.6)
    y_max, _ = nn.max_pool_forward(x, (2, 2), (2, 2))
    y_avg, _ = nn.avg_pool_forward(x, (2, 2), (2, 2))
    np.testing.assert_allclose(y_max, 0.6)
    np.testing.assert_allclose(y_avg, 0.6)


def test_max_pool_backward_routes_to_argmax():
    x = RNG.uniform(size=(2, 6, 6, 3))
    y, cache = nn.max_pool_forward(x, (2, 2), (2, 2))
    dy = RNG.uniform(size=y.shape)
    dx = nn.max_pool_backward(dy, cache)
    # gradient mass is conserved per window and lands only on the window max
    assert dx.sum() == pytest.approx(dy.sum(), rel=1e-12)
    nonzero = dx != 0
    assert nonzero.sum() <= dy.size
    for n in range(2):
        for c in range(3):
            for oh in range(3):
                for ow in range(3):
                    window = x[n, 2 * oh : 2 * oh + 2, 2 * ow : 2 * ow + 2, c]
                    grads = dx[n, 2 * oh : 2 * oh + 2, 2 * ow : 2 * ow + 2, c]
                    flat_arg = window.argmax()
                    assert grads.reshape(-1)[flat_arg] == dy[n, oh, ow, c]
                    assert np.count_nonzero(grads) == 1


def test_max_pool_tie_takes_first_in_window_order():
    x = np.zeros((1, 2, 2, 1))
    y, cache = nn.max_pool_forward(x, (2, 2), (2, 2))
    dx = nn.max_pool_backward(np.ones_like(y), cache)
    assert dx[0, 0, 0, 0] == 1.0
    assert dx.sum() == 1.0


def test_pool_gradients_vs_finite_differences():
    net = micro_net(nn.Conv2D(2, (3, 3)), nn.Relu(), nn.MaxPool((2, 2), (2, 2)),
                    nn.AvgPool((2, 2), (1, 1)), nn.Flatten(), nn.Dense(2),
                    input_shape=(8, 8, 2))
    check_gradients(net)


# -- dense / softmax ----------------------------------------------------------

def test_dense_identity_weights():
    x = RNG.uniform(size=(3, 4))
    y, _ = nn.dense_forward(x, np.eye(4), np.zeros(4))
    np.testing.assert_array_equal(y, x)


def test_dense_zero_weights_bias_broadcast():
    x = RNG.uniform(size=(5, 3))
    y, _ = nn.dense_forward(x, np.zeros((3, 2)), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(y, np.tile([1.0, 2.0], (5, 1)))


def test_dense_gradients_vs_finite_differences():
    net = nn.NetworkSpec((8,), (nn.Dense(3), nn.Relu(), nn.Dense(2)))
    params = nn.init_params(net, 3, dtype=np.float64)
    x = SeededPrng(4).uniform((4, 8))
    y = np.array([0, 1, 0, 1])
    report = nn.gradient_check(net, params, x, y, sample_count=25, h=1e-5)
    assert report.max_rel_err < 1e-4


def test_linear_network_gradients_are_nearly_exact():
    net = nn.NetworkSpec((6,), (nn.Dense(4), nn.Dense(2)))
    params = nn.init_params(net, 9, dtype=np.float64)
    x = SeededPrng(10).uniform((3, 6))
    y = np.array([0, 1, 1])
    report = nn.gradient_check(net, params, x, y, sample_count=24, h=1e-5)
    assert report.max_rel_err < 1e-8


def test_softmax_symmetric_logits():
    loss, probs, _ = nn.softmax_cross_entropy(np.zeros((1, 2)), np.array([0]))
    np.testing.assert_allclose(probs, [[0.5, 0.5]])
    assert loss == pytest.approx(np.log(2), rel=1e-9)


def test_softmax_confident_correct():
    loss, _, _ = nn.softmax_cross_entropy(np.array([[30.0, -30.0]]), np.array([0]))
    assert loss < 1e-6


def test_softmax_shift_invariance():
    logits = RNG.normal(size=(6, 2))
    labels = np.array([0, 1, 0, 1, 1, 0])
    loss_a, probs_a, _ = nn.softmax_cross_entropy(logits, labels)
    loss_b, probs_b, _ = nn.softmax_cross_entropy(logits + 100.0, labels)
    assert abs(loss_a - loss_b) < 1e-6
    np.testing.assert_allclose(probs_a, probs_b, atol=1e-6)


def test_softmax_rows_sum_to_one():
    logits = RNG.normal(size=(50, 2)) * 10
    _, probs, _ = nn.softmax_cross_entropy(logits, np.zeros(50, dtype=int))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_softmax_gradient_formula():
    logits = RNG.normal(size=(4, 2))
    labels = np.array([0, 1, 1, 0])
    _, probs, grad = nn.softmax_cross_entropy(logits, labels)
    onehot = np.eye(2)[labels]
    np.testing.assert_allclose(grad, (probs - onehot) / 4, rtol=1e-12)


# -- end-to-end gradient check and fault injection ----------------------------

def test_end_to_end_reduced_style_network_gradients():
    net = micro_net(
        nn.Conv2D(4, (3, 3), (1, 1)), nn.BatchNorm(4), nn.Relu(),
        nn.Conv2D(6, (3, 3), (2, 2)), nn.Relu(), nn.Dropout(0.25),
        nn.MaxPool((2, 2), (1, 1)), nn.Flatten(),
        nn.Dense(8), nn.Relu(), nn.Dropout(0.4), nn.Dense(2),
        input_shape=(10, 10, 3),
    )
    # seed chosen so no sampled perturbation straddles a ReLU/argmax kink at this h
    report = check_gradients(net, batch=4, sample_count=20, h=1e-4, tol=1e-4, seed=6)
    assert len(report.per_layer) == 5  # two convs, one BN, two dense layers


def test_gradient_check_requires_float64():
    net = nn.NetworkSpec((4,), (nn.Dense(2),))
    params = nn.init_params(net, 0, dtype=np.float32)
    with pytest.raises(ConfigError, match="float64"):
        nn.gradient_check(net, params, np.zeros((2, 4)), np.array([0, 1]))


def test_gradient_check_catches_transposed_dense_backward(monkeypatch):
    """Sensitivity: a deliberately wrong backward must be flagged loudly."""

    def bad_dense_backward(dy, cache):
        x, weights = cache
        return dy @ weights.T, (x.T @ dy).T.reshape(weights.shape), dy.sum(axis=0)

    monkeypatch.setattr(nn, "dense_backward", bad_dense_backward)
    net = nn.NetworkSpec((5,), (nn.Dense(5), nn.Relu(), nn.Dense(2)))
    params = nn.init_params(net, 21, dtype=np.float64)
    x = SeededPrng(22).uniform((4, 5))
    y = np.array([0, 1, 0, 1])
    report = nn.gradient_check(net, params, x, y, sample_count=25, h=1e-5, seed=1)
    assert report.max_rel_err > 1e-2
