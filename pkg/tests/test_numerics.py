import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import finite_difference
from intelligent_trainer.numerics import AdamState, Mlp, RngStream, adam_step, flatten, unflatten


def test_identity_layer_passes_input_through():
    net = Mlp((2, 2))
    net.weights[0][...] = np.eye(2)
    np.testing.assert_array_equal(net.forward([1.0, 2.0]), [1.0, 2.0])


def test_zero_tanh_net_outputs_zero():
    net = Mlp((3, 4), output_activation="tanh")
    np.testing.assert_array_equal(net.forward([5.0, -2.0, 7.0]), np.zeros(4))


def test_two_layer_net_matches_hand_composition(rng):
    net = Mlp((2, 3, 1), rng)
    x = np.array([0.3, -1.2])
    w1, b1 = net.weights[0], net.biases[0]
    w2, b2 = net.weights[1], net.biases[1]
    h = [np.tanh(sum(x[i] * w1[i, j] for i in range(2)) + b1[j]) for j in range(3)]
    y = sum(h[j] * w2[j, 0] for j in range(3)) + b2[0]
    assert net.forward(x)[0] == pytest.approx(y, abs=1e-14)


def test_batch_forward_matches_rows(rng):
    net = Mlp((3, 5, 2), rng, "relu", "tanh")
    x = rng.normal((7, 3))
    batch = net.forward(x)
    for i in range(7):
        np.testing.assert_allclose(batch[i], net.forward(x[i]), rtol=0, atol=1e-15)


def test_dimension_mismatch_raises(rng):
    net = Mlp((3, 2), rng)
    with pytest.raises(ValueError):
        net.forward([1.0, 2.0])
    with pytest.raises(ValueError):
        net.backprop([1.0, 2.0, 3.0], [1.0])


def test_linear_chain_rule():
    net = Mlp((1, 1))
    net.weights[0][0, 0] = 2.5
    grads, dx = net.backprop([3.0], [1.0])
    assert grads[0] == 3.0  # d/dw = x
    assert grads[1] == 1.0  # d/db
    assert dx[0] == 2.5  # d/dx = w


def test_zero_output_gradient_gives_zero_gradients(rng):
    net = Mlp((4, 6, 3), rng)
    grads, dx = net.backprop(rng.normal(4), np.zeros(3))
    assert not grads.any() and not dx.any()


@pytest.mark.parametrize("hidden,out", [("tanh", "identity"), ("tanh", "tanh"), ("relu", "identity")])
def test_backprop_matches_finite_differences(hidden, out):
    rng = RngStream(7)
    net = Mlp((3, 5, 4, 2), rng, hidden, out)
    x = rng.normal((4, 3))
    g_out = rng.normal((4, 2))

    def loss_params(p):
        clone = net.clone()
        clone.set_params(p)
        return float(np.sum(clone.forward(x) * g_out))

    def loss_input(xi):
        return float(np.sum(net.forward(xi.reshape(4, 3)) * g_out))

    grads, dx = net.backprop(x, g_out)
    np.testing.assert_allclose(grads, finite_difference(loss_params, net.params), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(dx.ravel(), finite_difference(loss_input, x.ravel()), rtol=1e-5, atol=1e-7)


def test_cached_backprop_equals_uncached(rng):
    net = Mlp((3, 8, 2), rng)
    x, g = rng.normal((5, 3)), rng.normal((5, 2))
    out, cache = net.forward_cached(x)
    np.testing.assert_array_equal(out, net.forward(x))
    a, b = net.backprop(x, g, cache), net.backprop(x, g)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_weight_views_share_the_flat_vector(rng):
    net = Mlp((2, 3, 1), rng)
    net.params[0] = 42.0
    assert net.weights[0][0, 0] == 42.0
    layers = unflatten(net.params, net.layer_sizes)
    np.testing.assert_array_equal(flatten(layers), net.params)


def test_adam_first_step_is_minus_lr():
    p = np.zeros(5)
    adam_step(p, np.ones(5), AdamState(5), 0.1)
    assert np.all(np.abs(p + 0.1) < 1e-6)


def test_adam_zero_gradient_is_a_no_op():
    p = np.arange(4.0)
    state = AdamState(4)
    adam_step(p, np.zeros(4), state, 0.1)
    np.testing.assert_array_equal(p, np.arange(4.0))
    assert not state.first_moment.any() and not state.second_moment.any()


def test_adam_rejects_non_finite_gradients():
    with pytest.raises(FloatingPointError):
        adam_step(np.zeros(2), np.array([1.0, np.nan]), AdamState(2), 0.1)
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(2), AdamState(2), 0.0)


# |g| well above epsilon, where the bias-corrected step is -lr * sign(g)
@given(st.floats(1e-3, 1e3), st.booleans(), st.floats(1e-4, 1.0))
def test_adam_first_step_moves_against_gradient_sign(g, negative, lr):
    g = -g if negative else g
    p = np.zeros(1)
    adam_step(p, np.array([g]), AdamState(1), lr)
    assert p[0] == pytest.approx(-lr * np.sign(g), rel=1e-4)


def test_rng_is_deterministic():
    a, b = RngStream(99), RngStream(99)
    assert [a.uniform() for _ in range(1000)] == [b.uniform() for _ in range(1000)]


def test_uniform_mean_is_one_half():
    r = RngStream(3)
    draws = r.gen.random(100_000)
    assert abs(draws.mean() - 0.5) < 0.01
    assert 0.0 <= draws.min() and draws.max() < 1.0


def test_spawned_streams_differ_and_are_reproducible():
    c1, c2 = RngStream(5).spawn(2)
    assert c1.uniform() != c2.uniform()
    assert RngStream(5).spawn(2)[1].uniform() == RngStream(5).spawn(2)[1].uniform()
