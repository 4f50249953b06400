"""Benchmark controllers sharing the agent act() protocol.

The Bayesian controller is proportional state-based feedback: it drives
the beam-splitter coupling against the deviation of the observed photon
number (or filtered photocurrent) from the Bell-state value 0.5, with
gain lambda. The random controller draws actions uniformly from the
action box.
"""

from __future__ import annotations

import numpy as np

from ..dynamics import ACTION_BOUND

LAMBDA_MAX = 10  # largest integer gain keeping |G| <= ACTION_BOUND for observations in [0, 1]


def bayesian_action(observation: float, lam: float, bound: float = ACTION_BOUND) -> float:
    """Proportional feedback G = -lambda (O - 0.5), clamped to the box."""
    return float(np.clip(-lam * (observation - 0.5), -bound, bound))


class BayesianController:
    """Gain-lambda proportional feedback on a scalar observation."""

    kind = "bayesian"
    recurrent = False

    def __init__(self, lam: float, bound: float = ACTION_BOUND):
        self.lam = float(lam)
        self.bound = bound

    def begin_episodes(self, n_envs: int) -> None:
        pass

    def act(self, obs: np.ndarray, deterministic: bool = False):
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        actions = np.clip(-self.lam * (obs[:, :1] - 0.5), -self.bound, self.bound)
        return actions, {}


class RandomController:
    """Uniform draws over the action box, seeded for reproducibility."""

    kind = "random"
    recurrent = False

    def __init__(self, action_dim: int, seed: int = 0, bound: float = ACTION_BOUND):
        self.action_dim = action_dim
        self.bound = bound
        self.rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))

    def begin_episodes(self, n_envs: int) -> None:
        pass

    def act(self, obs: np.ndarray, deterministic: bool = False):
        n = np.atleast_2d(np.asarray(obs)).shape[0]
        return self.rng.uniform(-self.bound, self.bound, size=(n, self.action_dim)), {}


def lambda_grid(env_factory, lambdas=None, episodes: int = 3, base_seed: int = 0) -> dict[int, float]:
    """Mean episode entanglement for each candidate gain.

    env_factory(seed) must build a fresh single environment; each gain
    is scored on the same seeds so the comparison is paired.
    """
    if lambdas is None:
        lambdas = range(1, LAMBDA_MAX + 1)
    table: dict[int, float] = {}
    for lam in lambdas:
        controller = BayesianController(lam)
        scores = []
        for ep in range(episodes):
            env = env_factory(base_seed + ep)
            obs = env.reset()
            controller.begin_episodes(1)
            en = []
            done = False
            while not done:
                action, _ = controller.act(obs[None, :])
                obs, _, done, record = env.step(action[0])
                en.append(record.E_N)
            scores.append(float(np.mean(en)))
        table[int(lam)] = float(np.mean(scores))
    return table


def select_lambda(env_factory, lambdas=None, episodes: int = 3, base_seed: int = 0):
    """Grid-search the gain; returns (best_lambda, score_table)."""
    table = lambda_grid(env_factory, lambdas, episodes, base_seed)
    best = max(table, key=table.get)
    return best, table
