"""Dense, recurrent, and optimizer building blocks with explicit backprop.

Everything operates on float64 numpy arrays. Layers cache forward
activations and accumulate parameter gradients on backward; callers
zero gradients between updates through the optimizer. The LSTM exposes
a cache-free single step for action selection and a caching sequence
pass for truncated backprop through time.
"""

from __future__ import annotations

import numpy as np


class Parameter:
    """A learnable array together with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return self.value.size


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dense:
    """Affine layer y = x W + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, scale: float | None = None):
        if scale is None:
            scale = 1.0 / np.sqrt(in_dim)
        self.w = Parameter("w", rng.normal(0.0, scale, size=(in_dim, out_dim)))
        self.b = Parameter("b", np.zeros(out_dim))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.w.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.value.T

    def params(self) -> list[Parameter]:
        return [self.w, self.b]


class Tanh:
    def __init__(self):
        self._y = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * (1.0 - self._y**2)

    def params(self) -> list[Parameter]:
        return []


class Mlp:
    """Feed-forward tanh network with a linear output head.

    hidden defaults to the 256x128x64 stack used by both the actor and
    the critic; out_scale shrinks the head initialization so fresh
    policies start near-deterministic in the squashed action space.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (256, 128, 64),
        out_scale: float = 1.0,
    ):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = tuple(hidden)
        self.layers = []
        prev = in_dim
        for width in hidden:
            self.layers.append(Dense(prev, width, rng))
            self.layers.append(Tanh())
            prev = width
        self.layers.append(Dense(prev, out_dim, rng, scale=out_scale / np.sqrt(prev)))

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (batch, {self.in_dim}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params()]


class LstmLayer:
    """Single LSTM layer with combined input/recurrent weight matrices.

    Gate layout along the last axis is (input, forget, cell, output);
    the forget-gate bias starts at 1 so early training does not erase
    the cell state.
    """

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        scale = 1.0 / np.sqrt(in_dim + hidden_dim)
        self.w = Parameter("w", rng.normal(0.0, scale, size=(in_dim + hidden_dim, 4 * hidden_dim)))
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim : 2 * hidden_dim] = 1.0
        self.b = Parameter("b", b)
        self._cache = None

    def initial_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.hidden_dim)), np.zeros((batch, self.hidden_dim))

    def _gates(self, x, h_prev):
        z = np.concatenate([x, h_prev], axis=1) @ self.w.value + self.b.value
        hd = self.hidden_dim
        i = _sigmoid(z[:, :hd])
        f = _sigmoid(z[:, hd : 2 * hd])
        g = np.tanh(z[:, 2 * hd : 3 * hd])
        o = _sigmoid(z[:, 3 * hd :])
        return i, f, g, o

    def step(self, x: np.ndarray, state: tuple[np.ndarray, np.ndarray]):
        """Cache-free single step for rollouts; returns (h, (h, c))."""
        h_prev, c_prev = state
        i, f, g, o = self._gates(x, h_prev)
        c = f * c_prev + i * g
        h = o * np.tanh(c)
        return h, (h, c)

    def forward_sequence(self, xs: np.ndarray, state: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        """Run a (T, B, in) sequence, caching activations for backward."""
        if xs.ndim != 3 or xs.shape[2] != self.in_dim:
            raise ValueError(f"expected sequence of shape (T, batch, {self.in_dim}), got {xs.shape}")
        h, c = state
        steps = []
        hs = np.empty((xs.shape[0], xs.shape[1], self.hidden_dim))
        for t in range(xs.shape[0]):
            i, f, g, o = self._gates(xs[t], h)
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            steps.append((xs[t], h, c, i, f, g, o, tc))
            c = c_new
            h = o * tc
            hs[t] = h
        self._cache = steps
        self._final = (h, c)
        return hs

    def final_state(self) -> tuple[np.ndarray, np.ndarray]:
        return self._final

    def backward_sequence(self, dhs: np.ndarray) -> np.ndarray:
        """Backprop through the cached sequence; gradients stop at the
        segment's initial state (truncated BPTT)."""
        steps = self._cache
        hd = self.hidden_dim
        dxs = np.empty((len(steps), dhs.shape[1], self.in_dim))
        dh_next = np.zeros((dhs.shape[1], hd))
        dc_next = np.zeros((dhs.shape[1], hd))
        for t in range(len(steps) - 1, -1, -1):
            x, h_prev, c_prev, i, f, g, o, tc = steps[t]
            dh = dhs[t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc**2) + dc_next
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g**2),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            xh = np.concatenate([x, h_prev], axis=1)
            self.w.grad += xh.T @ dz
            self.b.grad += dz.sum(axis=0)
            dxh = dz @ self.w.value.T
            dxs[t] = dxh[:, : self.in_dim]
            dh_next = dxh[:, self.in_dim :]
            dc_next = dc * f
        return dxs

    def params(self) -> list[Parameter]:
        return [self.w, self.b]


class RecurrentNet:
    """Tanh MLP trunk followed by one LSTM layer and a linear head."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (256, 128, 64),
        lstm_dim: int = 256,
        out_scale: float = 1.0,
    ):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = tuple(hidden)
        self.lstm_dim = lstm_dim
        self.trunk = []
        prev = in_dim
        for width in hidden:
            self.trunk.append(Dense(prev, width, rng))
            self.trunk.append(Tanh())
            prev = width
        self.lstm = LstmLayer(prev, lstm_dim, rng)
        self.head = Dense(lstm_dim, out_dim, rng, scale=out_scale / np.sqrt(lstm_dim))

    def initial_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return self.lstm.initial_state(batch)

    def _trunk_forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.trunk:
            x = layer.forward(x)
        return x

    def forward_step(self, x: np.ndarray, state):
        """Single-step inference; returns (output, new_state)."""
        feat = x
        for layer in self.trunk:
            feat = layer.forward(feat)
        h, new_state = self.lstm.step(feat, state)
        return self.head.forward(h), new_state

    def forward_sequence(self, xs: np.ndarray, state) -> np.ndarray:
        """Caching pass over (T, B, in); flattens the trunk over time."""
        t_steps, batch, _ = xs.shape
        feat = self._trunk_forward(xs.reshape(t_steps * batch, -1))
        hs = self.lstm.forward_sequence(feat.reshape(t_steps, batch, -1), state)
        return self.head.forward(hs.reshape(t_steps * batch, -1)).reshape(t_steps, batch, self.out_dim)

    def final_state(self):
        return self.lstm.final_state()

    def backward_sequence(self, dys: np.ndarray) -> None:
        t_steps, batch, _ = dys.shape
        dhs = self.head.backward(dys.reshape(t_steps * batch, -1)).reshape(t_steps, batch, -1)
        dfeat = self.lstm.backward_sequence(dhs)
        dx = dfeat.reshape(t_steps * batch, -1)
        for layer in reversed(self.trunk):
            dx = layer.backward(dx)

    def params(self) -> list[Parameter]:
        out = [p for layer in self.trunk for p in layer.params()]
        out.extend(self.lstm.params())
        out.extend(self.head.params())
        return out


def count_params(net) -> int:
    return sum(p.size for p in net.params())


class Adam:
    """Adam with bias correction over an explicit parameter list."""

    def __init__(self, params: list[Parameter], lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.value -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat array view for checkpointing."""
        out = {"t": np.array(self.t)}
        for k, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{k}"] = m
            out[f"v{k}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["t"])
        for k in range(len(self.m)):
            self.m[k][...] = arrays[f"m{k}"]
            self.v[k][...] = arrays[f"v{k}"]
