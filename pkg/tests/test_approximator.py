import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from a2t.approximator import (
    Gradient, ModelFormatError, Network, Optimizer, ShapeError, apply_update, backward, flatten, forward,
    from_bytes, init_network, load_model, log_prob_grad, save_model, softmax, to_bytes, unflatten, zeros_network,
)


def central(f, theta, h=1e-5):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a)), np.max(np.abs(b)))


nets = st.builds(
    lambda seed, sizes, head: init_network(sizes, head, np.random.default_rng(seed)),
    st.integers(0, 2**31 - 1),
    st.lists(st.integers(1, 16), min_size=2, max_size=4),
    st.sampled_from(["linear", "softmax"]),
)


# forward

def test_zero_linear_net_outputs_zeros():
    net = zeros_network([4, 3, 2])
    np.testing.assert_array_equal(forward(net, np.array([1.0, -2.0, 3.0, 0.5])), np.zeros(2))


def test_equal_logits_give_uniform_softmax():
    net = zeros_network([2, 3], head="softmax")
    np.testing.assert_allclose(forward(net, np.array([0.3, 7.0])), np.full(3, 1 / 3))


def test_hand_matrix_multiply():
    net = Network([np.array([[2.0, 0.0], [0.0, 3.0]])], [np.zeros(2)])
    np.testing.assert_array_equal(forward(net, np.array([1.0, 1.0])), [2.0, 3.0])


def test_forward_rejects_wrong_length():
    net = zeros_network([3, 2])
    with pytest.raises(ShapeError):
        forward(net, np.ones(4))


def test_incompatible_layers_rejected():
    with pytest.raises(ShapeError):
        Network([np.ones((3, 2)), np.ones((2, 4))], [np.zeros(3), np.zeros(2)])


def test_batch_forward_matches_rows():
    rng = np.random.default_rng(1)
    net = init_network([3, 5, 2], "softmax", rng)
    X = rng.normal(size=(6, 3))
    np.testing.assert_allclose(forward(net, X), np.stack([forward(net, x) for x in X]))


@settings(max_examples=60, deadline=None)
@given(nets, st.integers(0, 1000), st.floats(-50, 50))
def test_softmax_head_is_shift_invariant_simplex(net, seed, shift):
    x = np.random.default_rng(seed).normal(scale=3, size=net.n_inputs)
    if net.head != "softmax":
        net = Network(net.weights, net.biases, "softmax")
    p = forward(net, x)
    assert np.all(p >= 0) and np.all(p <= 1)
    assert abs(p.sum() - 1) < 1e-6
    shifted = Network(net.weights, net.biases[:-1] + [net.biases[-1] + shift], "softmax")
    assert np.max(np.abs(forward(shifted, x) - p)) < 1e-9


def test_softmax_survives_huge_logits():
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0])


# backward

def test_zero_upstream_gives_zero_gradient():
    rng = np.random.default_rng(0)
    net = init_network([3, 4, 2], "linear", rng)
    g = backward(net, rng.normal(size=3), np.zeros(2))
    assert not np.any(flatten(g))


def test_single_layer_unit_upstream():
    rng = np.random.default_rng(3)
    net = init_network([4, 3], "linear", rng)
    x = rng.normal(size=4)
    g = backward(net, x, np.array([0.0, 1.0, 0.0]))
    expected = np.zeros((3, 4))
    expected[1] = x
    np.testing.assert_array_equal(g.weights[0], expected)
    np.testing.assert_array_equal(g.biases[0], [0.0, 1.0, 0.0])


def test_backward_rejects_wrong_upstream():
    net = zeros_network([3, 2])
    with pytest.raises(ShapeError):
        backward(net, np.ones(3), np.ones(3))


@settings(max_examples=100, deadline=None)
@given(nets, st.integers(0, 10_000))
def test_backward_matches_finite_differences(net, seed):
    rng = np.random.default_rng(seed)
    x, u = rng.normal(size=net.n_inputs), rng.normal(size=net.n_outputs)
    g = flatten(backward(net, x, u))
    num = central(lambda t: float(forward(unflatten(t, net), x) @ u), flatten(net))
    assert rel_err(g, num) < 1e-4


# log_prob_grad

def test_log_prob_grad_equal_logits():
    net = zeros_network([3, 2], head="softmax")
    x = np.array([1.0, -1.0, 2.0])
    g = log_prob_grad(net, x, 0)
    np.testing.assert_allclose(g.weights[0], np.outer([0.5, -0.5], x))
    np.testing.assert_allclose(g.biases[0], [0.5, -0.5])


@settings(max_examples=100, deadline=None)
@given(nets, st.integers(0, 10_000))
def test_log_prob_grad_matches_finite_differences(net, seed):
    rng = np.random.default_rng(seed)
    net = Network(net.weights, net.biases, "softmax")
    x = rng.normal(size=net.n_inputs)
    a = int(rng.integers(net.n_outputs))
    g = flatten(log_prob_grad(net, x, a))
    num = central(lambda t: float(np.log(forward(unflatten(t, net), x)[a])), flatten(net))
    assert rel_err(g, num) < 1e-4


def test_squared_td_error_gradient():
    # 0.5 (y - Q(s,a))^2 -> upstream -(y - Q) e_a
    rng = np.random.default_rng(11)
    for _ in range(100):
        net = init_network([3, 6, 4], "linear", rng)
        x, a, y = rng.normal(size=3), int(rng.integers(4)), float(rng.normal())
        u = np.zeros(4)
        u[a] = -(y - forward(net, x)[a])
        g = flatten(backward(net, x, u))
        num = central(lambda t: 0.5 * (y - forward(unflatten(t, net), x)[a]) ** 2, flatten(net))
        assert rel_err(g, num) < 1e-4


def test_saturated_action_has_tiny_gradient():
    net = Network([np.zeros((2, 2))], [np.array([40.0, 0.0])], "softmax")
    assert log_prob_grad(net, np.ones(2), 0).norm() < 1e-12


def test_log_prob_grad_rejects_bad_action_and_head():
    with pytest.raises(IndexError):
        log_prob_grad(zeros_network([2, 3], "softmax"), np.ones(2), 3)
    with pytest.raises(ShapeError):
        log_prob_grad(zeros_network([2, 3], "linear"), np.ones(2), 0)


# apply_update

def _scalar_net(p):
    return Network([np.array([[p]])], [np.zeros(1)])


def test_zero_gradient_leaves_params():
    rng = np.random.default_rng(0)
    net = init_network([3, 2], "linear", rng)
    for kind in ("sgd", "rmsprop"):
        assert apply_update(net, Gradient.zeros_like(net), Optimizer(kind, 0.1)) == net


def test_sgd_ascent_step():
    g = Gradient([np.array([[2.0]])], [np.zeros(1)])
    new = apply_update(_scalar_net(1.0), g, Optimizer("sgd", 0.1), ascent=True)
    assert new.weights[0][0, 0] == pytest.approx(1.2)
    new = apply_update(_scalar_net(1.0), g, Optimizer("sgd", 0.1))
    assert new.weights[0][0, 0] == pytest.approx(0.8)


def test_rmsprop_first_step():
    g = Gradient([np.array([[1.0]])], [np.zeros(1)])
    opt = Optimizer("rmsprop", 0.0025, decay=0.95, eps=0.01)
    new = apply_update(_scalar_net(0.0), g, opt, ascent=True)
    assert new.weights[0][0, 0] == pytest.approx(0.0025 / np.sqrt(0.05 + 0.01), rel=1e-12)
    assert all(np.all(c >= 0) for c in opt.cache)


def test_zero_learning_rate_is_identity():
    rng = np.random.default_rng(5)
    net = init_network([3, 4, 2], "linear", rng)
    g = backward(net, rng.normal(size=3), rng.normal(size=2))
    assert apply_update(net, g, Optimizer("rmsprop", 0.0)) == net


def test_frozen_bias_stays_put():
    rng = np.random.default_rng(5)
    net = init_network([3, 2], "linear", rng, bias=False)
    g = backward(net, rng.normal(size=3), rng.normal(size=2))
    new = apply_update(net, g, Optimizer("sgd", 0.5, train_bias=False))
    assert not np.any(new.biases[0])
    assert not np.array_equal(new.weights[0], net.weights[0])


def test_apply_update_shape_mismatch():
    with pytest.raises(ShapeError):
        apply_update(zeros_network([3, 2]), Gradient.zeros_like(zeros_network([2, 2])), Optimizer())


def test_negative_learning_rate_rejected():
    with pytest.raises(ValueError):
        Optimizer("sgd", -0.1)


# flatten / serialization

def test_flatten_length_counts_params():
    net = zeros_network([2, 2])
    assert flatten(net).shape == (6,)


@settings(max_examples=50, deadline=None)
@given(nets)
def test_flatten_round_trip(net):
    assert unflatten(flatten(net), net) == net


def test_permuted_vector_differs():
    net = Network([np.array([[1.0, 2.0], [3.0, 4.0]])], [np.array([5.0, 6.0])])
    v = flatten(net)
    assert unflatten(v[::-1], net) != net


def test_unflatten_length_mismatch():
    with pytest.raises(ShapeError):
        unflatten(np.zeros(5), zeros_network([2, 2]))


@settings(max_examples=50, deadline=None)
@given(nets)
def test_bytes_round_trip_bit_exact(net):
    data = to_bytes(net)
    assert data[:4] == b"A2T1"
    back = from_bytes(data)
    assert back == net and to_bytes(back) == data


def test_model_file_round_trip(tmp_path):
    net = init_network([5, 8, 3], "softmax", np.random.default_rng(2))
    save_model(net, tmp_path / "m.a2t")
    assert load_model(tmp_path / "m.a2t") == net


def test_corrupt_model_rejected():
    data = to_bytes(zeros_network([2, 2]))
    with pytest.raises(ModelFormatError):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ModelFormatError):
        from_bytes(data[:-3])


def test_init_is_seed_deterministic_and_bounded():
    a = init_network([16, 8, 3], "linear", np.random.default_rng(9))
    b = init_network([16, 8, 3], "linear", np.random.default_rng(9))
    assert a == b
    assert np.all(np.abs(a.weights[0]) <= 1 / 4) and np.all(np.abs(a.weights[1]) <= 1 / np.sqrt(8))
