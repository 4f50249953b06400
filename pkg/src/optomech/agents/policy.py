"""Squashed diagonal-Gaussian action distribution.

The actor network emits the pre-squash mean; a state-independent
learnable log-std completes the distribution. Samples are squashed
through bound*tanh onto the action box, and log-probabilities include
the change-of-variables correction so they stay consistent with
sampling. PPO stores the pre-squash draw u, so ratios can be
recomputed exactly under updated parameters.
"""

from __future__ import annotations

import numpy as np

from ..dynamics import ACTION_BOUND
from .nets import Parameter

_LOG_2PI = np.log(2.0 * np.pi)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


class GaussianPolicy:
    """Distribution head shared by the feed-forward and recurrent actors."""

    def __init__(self, action_dim: int, bound: float = ACTION_BOUND, init_log_std: float = 0.0):
        self.action_dim = action_dim
        self.bound = bound
        self.log_std = Parameter("log_std", np.full(action_dim, float(init_log_std)))

    def params(self) -> list[Parameter]:
        return [self.log_std]

    def squash(self, u: np.ndarray) -> np.ndarray:
        return self.bound * np.tanh(u)

    def sample(self, mu: np.ndarray, rng: np.random.Generator):
        """Draw actions; returns (action, u, logp) with shapes (B, A), (B, A), (B,)."""
        sigma = np.exp(self.log_std.value)
        u = mu + sigma * rng.standard_normal(mu.shape)
        return self.squash(u), u, self.log_prob(u, mu)

    def log_prob(self, u: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """log pi(a) for the squashed sample with pre-squash value u."""
        sigma = np.exp(self.log_std.value)
        z = (u - mu) / sigma
        core = -0.5 * (z**2).sum(axis=-1) - self.log_std.value.sum() - 0.5 * self.action_dim * _LOG_2PI
        # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), numerically safe
        squash = 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u))
        correction = (squash + np.log(self.bound)).sum(axis=-1)
        return core - correction

    def entropy(self) -> float:
        """Entropy of the pre-squash Gaussian (state-independent)."""
        return float(self.log_std.value.sum() + 0.5 * self.action_dim * (1.0 + _LOG_2PI))

    def backward(self, u: np.ndarray, mu: np.ndarray, dlogp: np.ndarray) -> np.ndarray:
        """Accumulate d(loss)/d(log_std) and return d(loss)/d(mu).

        dlogp holds per-sample loss sensitivities d(loss)/d(logp_i).
        """
        sigma = np.exp(self.log_std.value)
        z = (u - mu) / sigma
        w = dlogp[..., None]
        self.log_std.grad += (w * (z**2 - 1.0)).reshape(-1, self.action_dim).sum(axis=0)
        return w * z / sigma
