"""Benchmark controllers and the gain grid search."""

import numpy as np
import pytest

from optomech.agents.baselines import (
    LAMBDA_MAX,
    BayesianController,
    RandomController,
    bayesian_action,
    lambda_grid,
    select_lambda,
)
from optomech.envs import LinearEnv, LinearEnvConfig


class TestBayesianAction:
    def test_zero_at_setpoint(self):
        assert bayesian_action(0.5, lam=10) == 0.0

    def test_signed_feedback(self):
        assert bayesian_action(0.75, lam=2) == pytest.approx(-0.5)
        assert bayesian_action(0.25, lam=2) == pytest.approx(0.5)

    def test_clamps_to_action_box(self):
        assert bayesian_action(1.0, lam=LAMBDA_MAX) == -5.0
        assert bayesian_action(0.0, lam=LAMBDA_MAX) == 5.0
        assert bayesian_action(2.0, lam=LAMBDA_MAX) == -5.0

    def test_controller_matches_scalar_rule(self):
        controller = BayesianController(lam=4)
        obs = np.array([[0.1], [0.5], [0.9]])
        actions, aux = controller.act(obs)
        assert aux == {}
        assert actions.shape == (3, 1)
        for row, o in zip(actions, obs[:, 0]):
            assert row[0] == pytest.approx(bayesian_action(o, lam=4))


class TestRandomController:
    def test_bounds_and_shape(self):
        controller = RandomController(action_dim=2, seed=0)
        actions, _ = controller.act(np.zeros((100, 3)))
        assert actions.shape == (100, 2)
        assert np.all(np.abs(actions) <= 5.0)

    def test_uniform_statistics(self):
        controller = RandomController(action_dim=1, seed=1)
        draws = np.concatenate([controller.act(np.zeros((200, 1)))[0] for _ in range(20)])
        assert abs(draws.mean()) < 0.15
        # variance of U(-5, 5) is 25/3
        assert draws.var() == pytest.approx(25.0 / 3.0, rel=0.1)

    def test_seeded_reproducibility(self):
        a = RandomController(action_dim=2, seed=5).act(np.zeros((4, 1)))[0]
        b = RandomController(action_dim=2, seed=5).act(np.zeros((4, 1)))[0]
        assert np.array_equal(a, b)
        c = RandomController(action_dim=2, seed=6).act(np.zeros((4, 1)))[0]
        assert not np.array_equal(a, c)

    def test_consecutive_calls_differ(self):
        controller = RandomController(action_dim=1, seed=2)
        first = controller.act(np.zeros((3, 1)))[0]
        second = controller.act(np.zeros((3, 1)))[0]
        assert not np.array_equal(first, second)


class TestLambdaGrid:
    def make_factory(self):
        config = LinearEnvConfig(T=40)

        def factory(seed):
            return LinearEnv(config, seed=seed)

        return factory

    def test_grid_scores_all_gains(self):
        table = lambda_grid(self.make_factory(), lambdas=[1, 5, 10], episodes=2)
        assert sorted(table) == [1, 5, 10]
        assert all(0.0 <= v <= 1.0 for v in table.values())

    def test_select_returns_argmax(self):
        best, table = select_lambda(self.make_factory(), lambdas=[1, 5, 10], episodes=2)
        assert best == max(table, key=table.get)

    def test_default_grid_spans_one_to_ten(self):
        config = LinearEnvConfig(T=5)
        table = lambda_grid(lambda seed: LinearEnv(config, seed=seed), episodes=1)
        assert sorted(table) == list(range(1, 11))
