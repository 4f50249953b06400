"""Network blocks against hand-computed values and finite differences."""

import numpy as np
import pytest

from optomech.agents.nets import Adam, Dense, LstmLayer, Mlp, RecurrentNet, Tanh, count_params

EPS = 1e-5
RTOL = 1e-4


def rel_error(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return np.max(np.abs(a - b) / denom)


def numeric_grad(f, array):
    """Central finite differences of scalar f with respect to array entries."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + EPS
        up = f()
        array[idx] = orig - EPS
        down = f()
        array[idx] = orig
        grad[idx] = (up - down) / (2 * EPS)
        it.iternext()
    return grad


class TestForwardOracles:
    def test_zero_weight_dense_is_zero(self):
        rng = np.random.default_rng(0)
        layer = Dense(3, 2, rng)
        layer.w.value[...] = 0.0
        assert np.all(layer.forward(rng.normal(size=(4, 3))) == 0.0)

    def test_single_tanh_layer_hand_computed(self):
        rng = np.random.default_rng(1)
        dense = Dense(2, 2, rng)
        dense.w.value[...] = [[0.5, -1.0], [0.25, 2.0]]
        dense.b.value[...] = [0.1, -0.2]
        x = np.array([[1.0, 2.0]])
        tanh = Tanh()
        out = tanh.forward(dense.forward(x))
        expected = np.tanh([[1.0 * 0.5 + 2.0 * 0.25 + 0.1, 1.0 * -1.0 + 2.0 * 2.0 - 0.2]])
        assert np.allclose(out, expected, atol=1e-12)

    def test_lstm_zero_input_zero_state(self):
        rng = np.random.default_rng(2)
        lstm = LstmLayer(3, 4, rng)
        lstm.b.value[...] = 0.0
        h, (h2, c2) = lstm.step(np.zeros((2, 3)), lstm.initial_state(2))
        assert np.all(h == 0.0)
        assert np.all(c2 == 0.0)

    def test_mlp_input_validation(self):
        net = Mlp(3, 2, np.random.default_rng(0), hidden=(4,))
        with pytest.raises(ValueError):
            net.forward(np.zeros((2, 5)))

    def test_parameter_count_matches_architecture(self):
        net = Mlp(1, 1, np.random.default_rng(0))
        expected = (1 * 256 + 256) + (256 * 128 + 128) + (128 * 64 + 64) + (64 * 1 + 1)
        assert count_params(net) == expected

    def test_recurrent_parameter_count(self):
        net = RecurrentNet(1, 2, np.random.default_rng(0), hidden=(8, 4), lstm_dim=6)
        expected = (1 * 8 + 8) + (8 * 4 + 4) + ((4 + 6) * 24 + 24) + (6 * 2 + 2)
        assert count_params(net) == expected

    def test_sequence_matches_stepwise(self):
        rng = np.random.default_rng(3)
        net = RecurrentNet(2, 3, rng, hidden=(5,), lstm_dim=4)
        xs = rng.normal(size=(6, 2, 2))
        seq = net.forward_sequence(xs, net.initial_state(2))
        state = net.initial_state(2)
        for t in range(6):
            out, state = net.forward_step(xs[t], state)
            assert np.allclose(out, seq[t], atol=1e-12)

    def test_batch_rows_do_not_interact(self):
        # each batch row carries its own hidden state, so permuting the
        # batch must permute the outputs and nothing else
        rng = np.random.default_rng(7)
        net = RecurrentNet(3, 2, rng, hidden=(6,), lstm_dim=5)
        xs = rng.normal(size=(8, 4, 3))
        perm = np.array([2, 0, 3, 1])
        seq = net.forward_sequence(xs, net.initial_state(4))
        permuted = net.forward_sequence(xs[:, perm], net.initial_state(4))
        assert np.allclose(permuted, seq[:, perm], atol=1e-12)


class TestGradients:
    def test_dense_analytic(self):
        rng = np.random.default_rng(4)
        layer = Dense(3, 2, rng)
        x = rng.normal(size=(5, 3))
        y = layer.forward(x)
        target = rng.normal(size=y.shape)
        dy = 2.0 * (y - target)
        dx = layer.backward(dy)
        assert np.allclose(layer.w.grad, x.T @ dy, atol=1e-12)
        assert np.allclose(layer.b.grad, dy.sum(axis=0), atol=1e-12)
        assert np.allclose(dx, dy @ layer.w.value.T, atol=1e-12)

    def test_mlp_finite_difference(self):
        rng = np.random.default_rng(5)
        net = Mlp(3, 2, rng, hidden=(6, 5))
        x = rng.normal(size=(4, 3))
        c = rng.normal(size=(4, 2))

        def loss():
            return float(np.sum(c * net.forward(x)))

        loss()
        net.backward(c)
        for p in net.params():
            num = numeric_grad(loss, p.value)
            assert rel_error(p.grad, num) < RTOL

    def test_mlp_input_gradient(self):
        rng = np.random.default_rng(6)
        net = Mlp(3, 2, rng, hidden=(5,))
        x = rng.normal(size=(2, 3))
        c = rng.normal(size=(2, 2))

        def loss():
            return float(np.sum(c * net.forward(x)))

        loss()
        dx = net.backward(c)
        num = numeric_grad(loss, x)
        assert rel_error(dx, num) < RTOL

    def test_lstm_finite_difference_over_sequence(self):
        rng = np.random.default_rng(7)
        lstm = LstmLayer(3, 4, rng)
        xs = rng.normal(size=(5, 2, 3))
        c = rng.normal(size=(5, 2, 4))

        def loss():
            return float(np.sum(c * lstm.forward_sequence(xs, lstm.initial_state(2))))

        loss()
        dxs = lstm.backward_sequence(c)
        for p in lstm.params():
            num = numeric_grad(loss, p.value)
            assert rel_error(p.grad, num) < RTOL
        num_x = numeric_grad(loss, xs)
        assert rel_error(dxs, num_x) < RTOL

    def test_recurrent_net_finite_difference(self):
        rng = np.random.default_rng(8)
        net = RecurrentNet(2, 2, rng, hidden=(4,), lstm_dim=3)
        xs = rng.normal(size=(4, 2, 2))
        c = rng.normal(size=(4, 2, 2))

        def loss():
            return float(np.sum(c * net.forward_sequence(xs, net.initial_state(2))))

        loss()
        net.backward_sequence(c)
        for p in net.params():
            num = numeric_grad(loss, p.value)
            assert rel_error(p.grad, num) < RTOL

    def test_gradient_accumulation_across_calls(self):
        rng = np.random.default_rng(9)
        layer = Dense(2, 2, rng)
        x = rng.normal(size=(3, 2))
        layer.forward(x)
        layer.backward(np.ones((3, 2)))
        first = layer.w.grad.copy()
        layer.forward(x)
        layer.backward(np.ones((3, 2)))
        assert np.allclose(layer.w.grad, 2.0 * first)


class TestAdam:
    def test_first_step_size_is_lr(self):
        rng = np.random.default_rng(10)
        layer = Dense(1, 1, rng)
        before = layer.w.value.copy()
        opt = Adam(layer.params(), lr=0.01)
        layer.w.grad[...] = 5.0  # any positive gradient: first step is -lr
        opt.step()
        assert layer.w.value[0, 0] == pytest.approx(before[0, 0] - 0.01, abs=1e-6)

    def test_minimizes_quadratic(self):
        rng = np.random.default_rng(11)
        layer = Dense(1, 1, rng)
        opt = Adam(layer.params(), lr=0.05)
        for _ in range(400):
            opt.zero_grad()
            layer.w.grad[...] = 2.0 * (layer.w.value - 3.0)
            layer.b.grad[...] = 2.0 * layer.b.value
            opt.step()
        assert layer.w.value[0, 0] == pytest.approx(3.0, abs=1e-2)
        assert layer.b.value[0] == pytest.approx(0.0, abs=1e-2)

    def test_state_roundtrip(self):
        rng = np.random.default_rng(12)
        layer = Dense(2, 2, rng)
        opt = Adam(layer.params(), lr=0.01)
        layer.w.grad[...] = 1.0
        opt.step()
        stored = {k: v.copy() for k, v in opt.state_arrays().items()}
        opt2 = Adam(layer.params(), lr=0.01)
        opt2.load_state_arrays(stored)
        assert opt2.t == opt.t
        assert np.allclose(opt2.m[0], opt.m[0])
