import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from migan import nn


def fd_grad(f, theta, h=1e-4):
    """Central differences of scalar ``f`` over a flat vector."""
    g = np.empty_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += h
        up = f(t)
        t[i] -= 2 * h
        g[i] = (up - f(t)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8)


def straight_line_forward(params, x):
    # independent re-implementation of the layer arithmetic
    a = np.asarray(x, float)
    for (W, b), act in zip(params.layers, params.activations):
        z = [sum(W[i, j] * a[j] for j in range(W.shape[1])) + b[i] for i in range(W.shape[0])]
        if act == "tanh":
            a = np.array([np.tanh(v) for v in z])
        elif act == "relu":
            a = np.array([v if v > 0 else 0.0 for v in z])
        else:
            a = np.array(z)
    return a


def linear_critic(w, b=0.0):
    w = np.atleast_1d(np.asarray(w, float))
    P = nn.MlpParams((w.size, 1), ["identity"])
    P.weights[0][0] = w
    P.biases[0][0] = b
    return P


def test_zero_net_outputs_zero():
    P = nn.MlpParams((3, 3, 3, 3), ["tanh", "tanh", "identity"])
    assert np.all(nn.mlp_forward(P, np.array([1.0, -2.0, 5.0])) == 0.0)


def test_hand_evaluated_relu_net():
    P = nn.MlpParams((2, 2, 1), ["relu", "identity"])
    P.weights[0][...] = np.eye(2)
    P.weights[1][...] = [[1.0, 1.0]]
    P.biases[1][...] = 0.5
    assert nn.mlp_forward(P, np.array([-1.0, 2.0]))[0] == pytest.approx(2.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_forward_matches_straight_line(seed):
    rng = np.random.default_rng(seed)
    P = nn.generator_net(3, rng)
    x = rng.standard_normal(3)
    assert np.allclose(nn.mlp_forward(P, x), straight_line_forward(P, x), rtol=1e-12, atol=1e-14)


def test_forward_is_deterministic_and_checks_shape():
    rng = np.random.default_rng(0)
    P = nn.critic_net(4, rng)
    x = rng.standard_normal((5, 4))
    assert np.array_equal(nn.mlp_forward(P, x), nn.mlp_forward(P, x))
    with pytest.raises(ValueError):
        nn.mlp_forward(P, np.zeros(3))


def test_layer_chain_checked():
    with pytest.raises(ValueError):
        nn.MlpParams((2, 3), ["relu", "identity"])


def test_linear_layer_grad():
    rng = np.random.default_rng(1)
    P = nn.MlpParams((3, 2), ["identity"])
    P.data[:] = rng.standard_normal(P.n_params)
    x, u = rng.standard_normal(3), rng.standard_normal(2)
    (dW, db), = P.unflatten(nn.grad_params(P, x, u))
    assert np.allclose(dW, np.outer(u, x))
    assert np.allclose(db, u)


def test_zero_upstream_gives_zero_grad():
    P = nn.generator_net(3, np.random.default_rng(2))
    assert np.all(nn.grad_params(P, np.ones(3), np.zeros(3)) == 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.sampled_from(["tanh", "relu"]))
def test_grad_params_finite_difference(seed, p, hidden):
    rng = np.random.default_rng(seed)
    P = nn.init_mlp((p, p + 1, p, 2), hidden, rng)
    for b in P.biases:
        b[...] = rng.standard_normal(b.shape) * 0.1
    x, u = rng.standard_normal(p), rng.standard_normal(2)
    _, zs = nn.forward_cache(P, x[None, :])
    if hidden == "relu" and min(np.min(np.abs(z)) for z in zs[:-1]) < 1e-3:
        return  # too close to a kink for differences
    f = lambda t: u @ nn.mlp_forward(P.with_data(t), x)
    fd = fd_grad(f, P.data.copy())
    assert rel_err(nn.grad_params(P, x, u), fd) < 1e-4


def test_grad_input_linear_critic():
    w = np.array([0.3, -1.2, 2.0])
    P = linear_critic(w, 0.7)
    for x in np.random.default_rng(3).standard_normal((4, 3)):
        assert np.allclose(nn.grad_input(P, x), w)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_grad_input_finite_difference(seed):
    rng = np.random.default_rng(seed)
    P = nn.critic_net(3, rng)
    x = rng.standard_normal(3)
    f = lambda v: nn.mlp_forward(P, v)[0]
    fd = fd_grad(f, x.copy(), h=1e-6)
    assert rel_err(nn.grad_input(P, x), fd) < 1e-4 or np.max(np.abs(fd)) < 1e-8


def test_relu_kink_uses_zero_slope():
    P = nn.MlpParams((1, 1, 1), ["relu", "identity"])
    P.weights[0][...] = 1.0
    P.weights[1][...] = 3.0
    assert nn.grad_input(P, np.array([0.0]))[0] == 0.0
    assert nn.grad_input(P, np.array([1e-9]))[0] == 3.0


def test_grad_input_needs_scalar_output():
    with pytest.raises(ValueError):
        nn.grad_input(nn.generator_net(2, np.random.default_rng(0)), np.zeros(2))


def test_penalty_on_unit_linear_critic_is_zero():
    w = np.array([0.6, 0.8])
    res = nn.grad_penalty_params(linear_critic(w), np.array([1.0, 2.0]), 10.0)
    assert res.value == pytest.approx(0.0)
    assert np.allclose(res.grad, 0.0)


def test_penalty_hand_example():
    res = nn.grad_penalty_params(linear_critic(2.0), np.array([0.4]), 10.0)
    assert res.value == pytest.approx(10.0)
    assert res.grad[0] == pytest.approx(20.0)
    assert res.grad[1] == 0.0


def test_penalty_zero_norm_is_flagged():
    res = nn.grad_penalty_params(linear_critic([0.0, 0.0]), np.zeros((3, 2)), 10.0)
    assert res.value == pytest.approx(10.0)
    assert res.zero_norm == 3
    assert np.all(res.grad == 0.0)


def test_penalty_rejects_tanh_critic():
    P = nn.init_mlp((2, 2, 1), "tanh", np.random.default_rng(0))
    with pytest.raises(ValueError):
        nn.grad_penalty_params(P, np.zeros(2), 10.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4))
def test_penalty_finite_difference(seed, p, batch):
    rng = np.random.default_rng(seed)
    P = nn.critic_net(p, rng)
    x = rng.standard_normal((batch, p))
    acts, zs = nn.forward_cache(P, x)
    if min(np.min(np.abs(z)) for z in zs[:-1]) < 1e-3:
        return
    f = lambda t: nn.grad_penalty_params(P.with_data(t), x, 10.0).value
    fd = fd_grad(f, P.data.copy())
    res = nn.grad_penalty_params(P, x, 10.0)
    assert rel_err(res.grad, fd) < 1e-3


def test_adam_first_step_hand_example():
    P = nn.MlpParams((1, 1), ["identity"])
    state = nn.AdamState.zeros(P.n_params)
    grads = np.array([1.0, 0.0])
    newP, newS = nn.adam_step(state, P, grads)
    assert newP.data[0] == pytest.approx(-0.000999999990, abs=1e-15)
    assert newP.data[1] == 0.0
    assert newS.step_count == 1 and state.step_count == 0
    assert P.data[0] == 0.0


def test_adam_zero_gradient_is_identity():
    rng = np.random.default_rng(4)
    P = nn.generator_net(3, rng)
    state = nn.AdamState.zeros(P.n_params)
    newP, newS = nn.adam_step(state, P, np.zeros(P.n_params))
    assert np.array_equal(newP.data, P.data)
    assert newS.step_count == 1


def test_adam_two_steps_shrink_quadratic():
    P = nn.MlpParams((1, 1), ["identity"])
    P.data[:] = [0.5, 0.0]
    state = nn.AdamState.zeros(2)
    sizes = [abs(P.data[0])]
    for _ in range(2):
        P, state = nn.adam_step(state, P, P.data.copy())  # grad of 0.5 * theta^2
        sizes.append(abs(P.data[0]))
    assert sizes[0] > sizes[1] > sizes[2]


def test_adam_shape_mismatch():
    P = nn.MlpParams((1, 1), ["identity"])
    with pytest.raises(ValueError):
        nn.adam_step(nn.AdamState.zeros(2), P, np.zeros(3))


def test_checkpoint_round_trip():
    P = nn.critic_net(5, np.random.default_rng(5))
    Q = nn.MlpParams.from_bytes(P.to_bytes())
    assert Q.sizes == P.sizes and Q.activations == P.activations
    assert np.array_equal(Q.data, P.data)
    assert P.to_bytes()[:8] == b"MIGANMLP"
    with pytest.raises(ValueError):
        nn.MlpParams.from_bytes(b"garbage!" + P.to_bytes()[8:])


def test_network_shapes():
    rng = np.random.default_rng(0)
    G, D = nn.generator_net(7, rng), nn.critic_net(7, rng)
    assert G.sizes == (7, 7, 7, 7) and G.activations == ("tanh", "tanh", "identity")
    assert D.sizes == (7, 7, 7, 1) and D.activations == ("relu", "relu", "identity")
    assert nn.generator_net(2, rng, width=16).sizes == (2, 16, 16, 2)
    for W, b in G.layers:
        limit = np.sqrt(6.0 / sum(W.shape))
        assert np.all(np.abs(W) <= limit) and np.all(b == 0)
