"""Clipped-surrogate policy optimization over episodic rollouts.

Two learners share the distribution head and update rule: a
feed-forward agent that treats every step independently, and a
recurrent agent that trains on fixed-length episode segments with
hidden states carried from the rollout (truncated backprop through
time). Rollout collection lives in the harness; agents consume lists
of completed episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingDivergedError
from .nets import Adam, Mlp, RecurrentNet
from .policy import GaussianPolicy


@dataclass(frozen=True)
class PpoHyperparams:
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    minibatch_size: int = 64
    epochs_per_update: int = 10
    episodes_per_update: int = 1
    entropy_coef: float = 0.0
    init_log_std: float = 0.0
    segment_len: int = 125

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon:
            raise ValueError("clip_epsilon must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.minibatch_size < 1 or self.epochs_per_update < 1 or self.episodes_per_update < 1:
            raise ValueError("batching parameters must be positive")
        if self.segment_len < 1:
            raise ValueError("segment_len must be positive")


@dataclass
class EpisodeData:
    """One completed episode as consumed by update()."""

    obs: np.ndarray
    u: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    # hidden states captured at segment starts: {start: (ah, ac, ch, cc)}
    seg_states: dict = field(default_factory=dict)


def gae_advantages(rewards, values, gamma: float, lam: float, bootstrap: float = 0.0):
    """Generalized advantage estimates and discounted returns.

    A_t = sum_k (gamma*lam)^k delta_{t+k} with
    delta_t = r_t + gamma V_{t+1} - V_t and V_T = bootstrap.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must have equal length")
    adv = np.empty_like(rewards)
    carry = 0.0
    v_next = float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * v_next - values[t]
        carry = delta + gamma * lam * carry
        adv[t] = carry
        v_next = values[t]
    return adv, adv + values


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, eps: float):
    """Mean clipped surrogate and its ascent gradient w.r.t. log-probs."""
    t1 = ratio * adv
    t2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    active = t1 <= t2
    value = float(np.minimum(t1, t2).mean())
    dlogp = np.where(active, ratio * adv, 0.0) / len(ratio)
    return value, dlogp


def _normalized(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


class _AgentCore:
    """State shared by both learners: nets, optimizers, batch prep."""

    def __init__(self, obs_dim: int, action_dim: int, hyper: PpoHyperparams, seed: int):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hyper = hyper
        self.seed = int(seed)
        init_ss, sample_ss = np.random.SeedSequence(self.seed).spawn(2)
        self._init_rng = np.random.Generator(np.random.Philox(init_ss))
        self.rng = np.random.Generator(np.random.Philox(sample_ss))
        self.policy = GaussianPolicy(action_dim, init_log_std=hyper.init_log_std)
        self.update_count = 0

    def _finish_setup(self):
        self.actor_opt = Adam(self.actor.params() + self.policy.params(), lr=self.hyper.learning_rate)
        self.critic_opt = Adam(self.critic.params(), lr=self.hyper.learning_rate)

    def _check_finite(self):
        for p in self.actor_opt.params + self.critic_opt.params:
            if not np.all(np.isfinite(p.value)):
                raise TrainingDivergedError(
                    f"non-finite values in parameter {p.name} after update {self.update_count}"
                )

    def _flatten(self, episodes: list[EpisodeData]):
        h = self.hyper
        obs = np.concatenate([e.obs for e in episodes])
        u = np.concatenate([e.u for e in episodes])
        logp_old = np.concatenate([e.logp for e in episodes])
        adv_parts, ret_parts = [], []
        for e in episodes:
            a, r = gae_advantages(e.rewards, e.values, h.gamma, h.gae_lambda)
            adv_parts.append(a)
            ret_parts.append(r)
        adv = _normalized(np.concatenate(adv_parts))
        ret = np.concatenate(ret_parts)
        return obs, u, logp_old, adv, ret


class PpoAgent(_AgentCore):
    """Feed-forward actor-critic with independent 256x128x64 networks."""

    kind = "ppo"
    recurrent = False

    def __init__(self, obs_dim: int, action_dim: int, hyper: PpoHyperparams | None = None, seed: int = 0, hidden: tuple[int, ...] = (256, 128, 64)):
        super().__init__(obs_dim, action_dim, hyper or PpoHyperparams(), seed)
        self.actor = Mlp(obs_dim, action_dim, self._init_rng, hidden=hidden, out_scale=0.01)
        self.critic = Mlp(obs_dim, 1, self._init_rng, hidden=hidden)
        self._finish_setup()

    def begin_episodes(self, n_envs: int) -> None:
        pass

    def act(self, obs: np.ndarray, deterministic: bool = False):
        """Actions for a batch of observations; aux carries what update() needs."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        mu = self.actor.forward(obs)
        if deterministic:
            return self.policy.squash(mu), {}
        action, u, logp = self.policy.sample(mu, self.rng)
        value = self.critic.forward(obs)[:, 0]
        return action, {"u": u, "logp": logp, "value": value}

    def update(self, episodes: list[EpisodeData]) -> dict:
        h = self.hyper
        obs, u, logp_old, adv, ret = self._flatten(episodes)
        m = len(obs)
        stats = {"batch_steps": m}
        stats["surrogate_start"] = self._surrogate_on(obs, u, logp_old, adv)
        stats["value_loss_start"] = self._value_loss_on(obs, ret)
        for epoch in range(h.epochs_per_update):
            for idx in _minibatches(self.rng, m, h.minibatch_size):
                self._minibatch_step(obs[idx], u[idx], logp_old[idx], adv[idx], ret[idx])
            if epoch == 0:
                stats["surrogate_after_first_epoch"] = self._surrogate_on(obs, u, logp_old, adv)
                stats["value_loss_after_first_epoch"] = self._value_loss_on(obs, ret)
        self._check_finite()
        self.update_count += 1
        stats["log_std"] = self.policy.log_std.value.copy()
        return stats

    def _surrogate_on(self, obs, u, logp_old, adv) -> float:
        logp = self.policy.log_prob(u, self.actor.forward(obs))
        value, _ = clipped_surrogate(np.exp(logp - logp_old), adv, self.hyper.clip_epsilon)
        return value

    def _value_loss_on(self, obs, ret) -> float:
        v = self.critic.forward(obs)[:, 0]
        return float(0.5 * np.mean((v - ret) ** 2))

    def _minibatch_step(self, obs, u, logp_old, adv, ret):
        h = self.hyper
        self.actor_opt.zero_grad()
        mu = self.actor.forward(obs)
        logp = self.policy.log_prob(u, mu)
        ratio = np.exp(logp - logp_old)
        _, dlogp_ascent = clipped_surrogate(ratio, adv, h.clip_epsilon)
        if h.entropy_coef:
            self.policy.log_std.grad -= h.entropy_coef
        dmu = self.policy.backward(u, mu, -dlogp_ascent)
        self.actor.backward(dmu)
        self.actor_opt.step()

        self.critic_opt.zero_grad()
        v = self.critic.forward(obs)[:, 0]
        self.critic.backward(((v - ret) / len(ret))[:, None])
        self.critic_opt.step()


class RecurrentPpoAgent(_AgentCore):
    """Actor-critic with an LSTM after the MLP trunk; trains on
    fixed-length segments whose initial hidden states come from the
    rollout."""

    kind = "recurrent_ppo"
    recurrent = True

    def __init__(self, obs_dim: int, action_dim: int, hyper: PpoHyperparams | None = None, seed: int = 0, hidden: tuple[int, ...] = (256, 128, 64), lstm_dim: int = 256):
        super().__init__(obs_dim, action_dim, hyper or PpoHyperparams(), seed)
        self.actor = RecurrentNet(obs_dim, action_dim, self._init_rng, hidden=hidden, lstm_dim=lstm_dim, out_scale=0.01)
        self.critic = RecurrentNet(obs_dim, 1, self._init_rng, hidden=hidden, lstm_dim=lstm_dim)
        self._finish_setup()
        self._actor_state = None
        self._critic_state = None

    def begin_episodes(self, n_envs: int) -> None:
        """Reset hidden states at episode boundaries."""
        self._actor_state = self.actor.initial_state(n_envs)
        self._critic_state = self.critic.initial_state(n_envs)

    def hidden_states(self):
        """Current per-env (actor, critic) states, for segment capture."""
        ah, ac = self._actor_state
        ch, cc = self._critic_state
        return ah.copy(), ac.copy(), ch.copy(), cc.copy()

    def act(self, obs: np.ndarray, deterministic: bool = False):
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        if self._actor_state is None:
            self.begin_episodes(obs.shape[0])
        mu, self._actor_state = self.actor.forward_step(obs, self._actor_state)
        value, self._critic_state = self.critic.forward_step(obs, self._critic_state)
        if deterministic:
            return self.policy.squash(mu), {}
        action, u, logp = self.policy.sample(mu, self.rng)
        return action, {"u": u, "logp": logp, "value": value[:, 0]}

    def update(self, episodes: list[EpisodeData]) -> dict:
        h = self.hyper
        seg_len = h.segment_len
        adv_all, ret_all = [], []
        for e in episodes:
            a, r = gae_advantages(e.rewards, e.values, h.gamma, h.gae_lambda)
            adv_all.append(a)
            ret_all.append(r)
        flat = np.concatenate(adv_all)
        mean, std = flat.mean(), flat.std() + 1e-8
        adv_all = [(a - mean) / std for a in adv_all]

        # group segments by length so each minibatch stacks cleanly
        by_len: dict[int, list[tuple[int, int]]] = {}
        for ei, e in enumerate(episodes):
            t_total = len(e.rewards)
            for start in range(0, t_total, seg_len):
                length = min(seg_len, t_total - start)
                by_len.setdefault(length, []).append((ei, start))
        segs_per_mb = max(1, h.minibatch_size // seg_len)

        stats = {"batch_steps": sum(len(e.rewards) for e in episodes)}
        first = self._segment_eval(episodes, adv_all, by_len)
        stats["surrogate_start"] = first
        for epoch in range(h.epochs_per_update):
            for length, segs in by_len.items():
                order = self.rng.permutation(len(segs))
                for k in range(0, len(segs), segs_per_mb):
                    chosen = [segs[j] for j in order[k : k + segs_per_mb]]
                    self._segment_step(episodes, adv_all, ret_all, chosen, length)
            if epoch == 0:
                stats["surrogate_after_first_epoch"] = self._segment_eval(episodes, adv_all, by_len)
        self._check_finite()
        self.update_count += 1
        stats["log_std"] = self.policy.log_std.value.copy()
        return stats

    def _gather(self, episodes, adv_all, ret_all, chosen, length):
        xs = np.stack([episodes[ei].obs[s : s + length] for ei, s in chosen], axis=1)
        u = np.stack([episodes[ei].u[s : s + length] for ei, s in chosen], axis=1)
        logp_old = np.stack([episodes[ei].logp[s : s + length] for ei, s in chosen], axis=1)
        adv = np.stack([adv_all[ei][s : s + length] for ei, s in chosen], axis=1)
        ret = None
        if ret_all is not None:
            ret = np.stack([ret_all[ei][s : s + length] for ei, s in chosen], axis=1)
        states = [episodes[ei].seg_states[s] for ei, s in chosen]
        actor_state = (
            np.concatenate([st[0] for st in states]),
            np.concatenate([st[1] for st in states]),
        )
        critic_state = (
            np.concatenate([st[2] for st in states]),
            np.concatenate([st[3] for st in states]),
        )
        return xs, u, logp_old, adv, ret, actor_state, critic_state

    def _segment_eval(self, episodes, adv_all, by_len) -> float:
        total, count = 0.0, 0
        for length, segs in by_len.items():
            xs, u, logp_old, adv, _, actor_state, _ = self._gather(episodes, adv_all, None, segs, length)
            mu = self.actor.forward_sequence(xs, actor_state)
            logp = self.policy.log_prob(u.reshape(-1, self.action_dim), mu.reshape(-1, self.action_dim))
            value, _ = clipped_surrogate(
                np.exp(logp - logp_old.reshape(-1)), adv.reshape(-1), self.hyper.clip_epsilon
            )
            total += value * adv.size
            count += adv.size
        return total / count

    def _segment_step(self, episodes, adv_all, ret_all, chosen, length):
        h = self.hyper
        xs, u, logp_old, adv, ret, actor_state, critic_state = self._gather(
            episodes, adv_all, ret_all, chosen, length
        )
        batch = xs.shape[1]
        flat_u = u.reshape(-1, self.action_dim)

        self.actor_opt.zero_grad()
        mu_seq = self.actor.forward_sequence(xs, actor_state)
        mu = mu_seq.reshape(-1, self.action_dim)
        logp = self.policy.log_prob(flat_u, mu)
        ratio = np.exp(logp - logp_old.reshape(-1))
        _, dlogp_ascent = clipped_surrogate(ratio, adv.reshape(-1), h.clip_epsilon)
        if h.entropy_coef:
            self.policy.log_std.grad -= h.entropy_coef
        dmu = self.policy.backward(flat_u, mu, -dlogp_ascent)
        self.actor.backward_sequence(dmu.reshape(length, batch, self.action_dim))
        self.actor_opt.step()

        self.critic_opt.zero_grad()
        v = self.critic.forward_sequence(xs, critic_state).reshape(-1)
        dv = (v - ret.reshape(-1)) / v.size
        self.critic.backward_sequence(dv.reshape(length, batch, 1))
        self.critic_opt.step()


def _minibatches(rng: np.random.Generator, total: int, size: int):
    order = rng.permutation(total)
    for k in range(0, total, size):
        yield order[k : k + size]
