import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hpcnn.cnn import (
    CnnModel,
    ConvLayer,
    DenseLayer,
    backward,
    conv_forward,
    dense_forward,
    forward,
    logit_gradient,
    maxpool_backward,
    maxpool_forward,
    predict,
    predict_proba,
    relu,
    softmax,
)
from hpcnn.errors import CacheMismatch, NumericalError, ShapeMismatch

from oracles import finite_difference, kink_free_toy, naive_conv, naive_pool, relative_error


def random_model(rng, side=39, k=16, n=2, scale=0.1):
    from hpcnn.cnn import pooled_side

    p = pooled_side(side, 3, 1, 2, 1)
    return CnnModel.create(
        rng.normal(0, 0.5, (k, 3, 3)), rng.normal(0, 0.1, k), rng.normal(0, scale, (n, k * p * p)), rng.normal(0, 0.1, n), side, [f"c{i}" for i in range(n)]
    )


@pytest.mark.parametrize("side,conv_side", [(39, 37), (20, 18)])
def test_conv_shapes(rng, side, conv_side):
    layer = ConvLayer(rng.normal(size=(16, 3, 3)), np.zeros(16))
    assert conv_forward(rng.random((side, side)), layer).shape == (16, conv_side, conv_side)


def test_conv_zero_input_gives_bias(rng):
    b = rng.normal(size=16)
    out = conv_forward(np.zeros((39, 39)), ConvLayer(rng.normal(size=(16, 3, 3)), b))
    assert np.all(out == b[:, None, None])


def test_conv_side_too_small(rng):
    with pytest.raises(ShapeMismatch):
        conv_forward(np.zeros((2, 2)), ConvLayer(rng.normal(size=(1, 3, 3)), np.zeros(1)))


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_matches_naive(rng, stride):
    for _ in range(5):
        x = rng.random((10, 10))
        f, b = rng.normal(size=(4, 3, 3)), rng.normal(size=4)
        assert np.allclose(conv_forward(x, ConvLayer(f, b, stride)), naive_conv(x, f, b, stride), atol=1e-12)


def test_conv_batch_equals_singles(rng):
    layer = ConvLayer(rng.normal(size=(3, 3, 3)), rng.normal(size=3))
    xs = rng.random((4, 9, 9))
    batch = conv_forward(xs, layer)
    for i in range(4):
        assert np.allclose(batch[i], conv_forward(xs[i], layer))


def test_conv_linearity(rng):
    layer = ConvLayer(rng.normal(size=(4, 3, 3)), np.zeros(4))
    x, y = rng.random((10, 10)), rng.random((10, 10))
    a, b = 0.7, -1.3
    assert np.allclose(conv_forward(a * x + b * y, layer), a * conv_forward(x, layer) + b * conv_forward(y, layer), atol=1e-6)


@pytest.mark.parametrize("value,expected", [(-3.0, 0.0), (5.0, 5.0), (0.0, 0.0)])
def test_relu(value, expected):
    assert relu(np.array([value]))[0] == expected


def test_pool_window_and_shapes():
    pooled, arg = maxpool_forward(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert pooled.shape == (1, 1, 1) and pooled[0, 0, 0] == 4 and arg[0, 0, 0] == 3
    assert maxpool_forward(np.zeros((16, 37, 37)))[0].shape == (16, 36, 36)
    assert maxpool_forward(np.zeros((16, 18, 18)))[0].shape == (16, 17, 17)
    const, _ = maxpool_forward(np.full((2, 5, 5), 0.3))
    assert np.all(const == 0.3) and const.shape == (2, 4, 4)


def test_pool_tie_breaks_first_row_major():
    _, arg = maxpool_forward(np.array([[2.0, 2.0], [2.0, 2.0]]))
    assert arg[0, 0] == 0
    _, arg = maxpool_forward(np.array([[1.0, 5.0], [5.0, 1.0]]))
    assert arg[0, 0] == 1


@pytest.mark.parametrize("size,stride", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_pool_matches_naive(rng, size, stride):
    maps = rng.random((3, 11, 11))
    pooled, _ = maxpool_forward(maps, size, stride)
    assert np.array_equal(pooled, naive_pool(maps, size, stride))
    fast, arg = maxpool_forward(maps, size, stride, with_argmax=False)
    assert arg is None and np.array_equal(fast, pooled)


def test_pool_too_small():
    with pytest.raises(ShapeMismatch):
        maxpool_forward(np.zeros((1, 1)), 2, 1)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 6, 6), elements=st.floats(-5, 5)), st.integers(1, 3), st.integers(1, 2))
def test_pool_backward_conserves_gradient(maps, size, stride):
    pooled, arg = maxpool_forward(maps, size, stride)
    g = np.arange(1, pooled.size + 1, dtype=float).reshape(pooled.shape)
    routed = maxpool_backward(g, arg, maps.shape, size, stride)
    assert np.isclose(routed.sum(), g.sum())
    # every routed gradient lands on a cell holding its window's maximum
    assert np.all((routed == 0) | np.isin(maps, pooled))


def test_dense():
    layer = DenseLayer(np.zeros((2, 5)), np.array([1.0, -1.0]))
    assert np.array_equal(dense_forward(np.ones(5), layer), [1.0, -1.0])
    assert np.array_equal(dense_forward(np.array([3.0]), DenseLayer(np.array([[2.0]]), np.zeros(1))), [6.0])
    with pytest.raises(ShapeMismatch):
        dense_forward(np.ones(4), layer)
    batch = dense_forward(np.ones((3, 5)), layer)
    assert batch.shape == (3, 2)


def test_softmax_examples():
    assert np.allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    big = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(big)) and np.isclose(big[0], 1.0) and big[1] < 1e-300 + 1e-12
    with pytest.raises(NumericalError):
        softmax(np.array([np.inf, 0.0]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_properties(z, c):
    p = softmax(z)
    assert np.all(p > 0) and abs(p.sum() - 1) < 1e-6
    assert np.allclose(softmax(z + c), p, atol=1e-6)
    # logits closer than rounding resolution give equal probabilities
    assert z[np.argmax(p)] >= z.max() - 1e-9


def test_forward_zero_network_is_uniform():
    k, n_in = 16, 16 * 36 * 36
    model = CnnModel.create(np.zeros((k, 3, 3)), np.zeros(k), np.zeros((2, n_in)), np.zeros(2), 39, ["a", "b"])
    probs, _ = forward(model, np.zeros((39, 39)))
    assert np.array_equal(probs, [0.5, 0.5])


def test_forward_properties(rng):
    model = random_model(rng)
    x = rng.random((39, 39))
    p1, _ = forward(model, x)
    p2, _ = forward(model, x)
    assert p1.shape == (2,) and abs(p1.sum() - 1) < 1e-6
    assert np.array_equal(p1, p2)
    xs = rng.random((5, 39, 39))
    batch, _ = forward(model, xs)
    assert np.allclose(batch[2], forward(model, xs[2])[0])
    assert np.allclose(predict_proba(model, xs, chunk=2), batch)
    assert np.array_equal(predict(model, xs), np.argmax(batch, axis=1))


def test_forward_wrong_side(rng):
    with pytest.raises(ShapeMismatch):
        forward(random_model(rng), np.zeros((20, 20)))


def test_model_construction_checks_dense_input(rng):
    with pytest.raises(ShapeMismatch):
        CnnModel.create(np.zeros((16, 3, 3)), np.zeros(16), np.zeros((2, 100)), np.zeros(2), 39, ["a", "b"])
    with pytest.raises(ShapeMismatch):
        CnnModel.create(np.zeros((16, 3, 3)), np.zeros(16), np.zeros((2, 20736)), np.zeros(2), 39, ["a"])
    assert random_model(rng, 39).num_features == 36 * 36 * 16
    assert random_model(rng, 20).num_features == 17 * 17 * 16


def test_model_is_immutable(rng):
    model = random_model(rng)
    with pytest.raises(ValueError):
        model.conv.filters[0, 0, 0] = 1.0


def test_logit_gradient_examples():
    assert np.array_equal(logit_gradient([0.2, 0.8], [0.2, 0.8]), [0, 0])
    assert np.array_equal(logit_gradient([0.5, 0.5], [1, 0]), [-0.5, 0.5])


def test_backward_logit_gradient_through_dense_bias(rng):
    model = random_model(rng)
    probs, cache = forward(model, rng.random((39, 39)))
    grads = backward(model, cache, [1, 0])
    # dL/db_dense equals the logit gradient
    assert np.allclose(grads.dense_biases, probs - [1, 0])


def test_backward_cache_mismatch(rng):
    a, b = random_model(rng, 39), random_model(rng, 20)
    _, cache = forward(a, rng.random((39, 39)))
    with pytest.raises(CacheMismatch):
        backward(b, cache, [1, 0])
    with pytest.raises(CacheMismatch):
        backward(a, cache, [1, 0, 0])


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model, x, target = kink_free_toy(rng)
    _, cache = forward(model, x)
    analytic = backward(model, cache, target).as_tuple()
    numeric = finite_difference([np.array(p) for p in model.parameters()], x, target, model)
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < 1e-4


def test_gradient_with_conv_and_pool_stride():
    rng = np.random.default_rng(77)
    model, x, target = kink_free_toy(rng, side=9, k=2, n_classes=2, pool=2, pool_stride=2)
    _, cache = forward(model, x)
    analytic = backward(model, cache, target).as_tuple()
    numeric = finite_difference([np.array(p) for p in model.parameters()], x, target, model)
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < 1e-4


def test_batch_gradient_is_mean_of_singles(rng):
    model = random_model(rng, side=9, k=3, n=3)
    xs = rng.random((4, 9, 9))
    ys = np.eye(3)[[0, 2, 1, 1]]
    _, cache = forward(model, xs)
    batch = backward(model, cache, ys).as_tuple()
    singles = [backward(model, forward(model, xs[i])[1], ys[i]).as_tuple() for i in range(4)]
    for j, g in enumerate(batch):
        assert np.allclose(g, np.mean([s[j] for s in singles], axis=0))
