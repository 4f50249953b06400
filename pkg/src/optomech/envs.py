"""Episodic control environments wrapping the stochastic dynamics.

Two regimes are exposed. The linear regime drives the beam-splitter
coupling G with a single scalar action and rewards proximity of the
observed photon number (or photocurrent) to the Bell-state value 0.5.
The nonlinear regime drives laser detuning and amplitude (delta,
alpha_L) and runs in one of two phases: an entanglement-rewarded
target-generating phase and a photon-number-tracking target-utilization
phase. A lock-step vectorized wrapper batches independent instances.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import (
    ACTION_BOUND,
    PhysicsParams,
    SmeStepper,
    linear_hamiltonian_parts,
    nonlinear_hamiltonian_parts,
)
from .fock import FockSpace, expectation, fock_ket, ket_to_density, mode_populations, number_operator
from .observe import (
    LOG2,
    CausalGaussianFilter,
    GaussianFilterConfig,
    log_negativity,
    photocurrent_from_probs,
)

OBSERVABLES = ("expected_n", "photocurrent")
INITIAL_STATES = ("pure_10", "mixed", "mixed_random")
PHASES = ("target_generating", "target_utilization")


@dataclass(frozen=True)
class LinearEnvConfig:
    """Linear-regime episode configuration.

    The photocurrent observable is averaged over n_traj trajectories
    (stepped in lock-step under the shared action) and then smoothed by
    a causal Gaussian filter of width filter_sigma steps.
    """

    T: int = 500
    observable: str = "expected_n"
    n_traj: int = 1
    eta: float = 1.0
    kappa: float = 0.01
    gamma: float | None = None
    dt: float = 0.01
    n_substeps: int = 10
    milstein: bool = True
    initial_state: str = "pure_10"
    mixed_p: float = 0.0
    mixed_p_range: tuple[float, float] = (0.0, 0.5)
    filter_sigma: float = 20.0
    cutoff: int = 2

    def __post_init__(self):
        if self.observable not in OBSERVABLES:
            raise ValueError(f"unknown observable {self.observable!r}")
        if self.initial_state not in INITIAL_STATES:
            raise ValueError(f"unknown initial_state {self.initial_state!r}")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        if not 0.0 <= self.mixed_p <= 1.0:
            raise ValueError(f"mixed_p must lie in [0, 1], got {self.mixed_p}")
        lo, hi = self.mixed_p_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"mixed_p_range must be ordered within [0, 1], got {self.mixed_p_range}")
        if self.cutoff < 2:
            raise ValueError("cutoff must be at least 2")

    def physics(self) -> PhysicsParams:
        return PhysicsParams(
            kappa=self.kappa,
            gamma=self.gamma,
            eta=self.eta,
            dt=self.dt,
            n_substeps=self.n_substeps,
            milstein=self.milstein,
        )


@dataclass(frozen=True)
class NonlinearEnvConfig:
    """Nonlinear-regime episode configuration.

    target_series is required in the target-utilization phase and must
    hold one photon-number target per step.
    """

    T: int = 500
    phase: str = "target_generating"
    eta: float = 0.1
    kappa: float = 0.1
    gamma: float | None = None
    g0: float = 0.2
    dt: float = 0.01
    n_substeps: int = 10
    milstein: bool = True
    cutoff: int = 10
    reward_a: float = 1.0
    reward_b: float = 30.0
    target_series: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.cutoff < 2:
            raise ValueError("cutoff must be at least 2")
        if self.reward_b <= 0:
            raise ValueError("reward_b must be positive")
        if self.phase == "target_utilization":
            if self.target_series is None:
                raise ValueError("target_utilization phase requires target_series")
            if len(self.target_series) != self.T:
                raise ValueError(
                    f"target_series length {len(self.target_series)} does not match T={self.T}"
                )

    def physics(self) -> PhysicsParams:
        return PhysicsParams(
            kappa=self.kappa,
            gamma=self.gamma,
            g0=self.g0,
            eta=self.eta,
            dt=self.dt,
            n_substeps=self.n_substeps,
            milstein=self.milstein,
        )


@dataclass
class StepRecord:
    """One environment transition as logged for analysis."""

    t: int
    observation: np.ndarray
    action: np.ndarray
    reward: float
    E_N: float
    raw_photocurrent: float | None = None


class _EnvBase:
    """Shared reset/step plumbing; subclasses provide the Hamiltonian,
    observable, and reward."""

    action_dim: int
    obs_dim: int = 1

    def __init__(self, space: FockSpace, physics: PhysicsParams, T: int, n_traj: int, seed: int):
        self.space = space
        self.physics = physics
        self.T = T
        self.n_traj = n_traj
        self._seed = int(seed)
        self._stepper = SmeStepper(space, physics)
        self._n_a = number_operator(space, "cavity")
        self._n_b = number_operator(space, "mech")
        self._episode = -1
        self._t = 0
        self._rho = None
        self._rng = None

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def episode_index(self) -> int:
        return self._episode

    def _initial_state(self) -> np.ndarray:
        raise NotImplementedError

    def _observe(self, raw_current) -> tuple[float, float | None]:
        raise NotImplementedError

    def _reward(self, obs: float) -> float:
        raise NotImplementedError

    def _hamiltonian(self, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reset(self) -> np.ndarray:
        """Start a new episode; returns the first observation.

        Each episode owns a fresh counter-based stream keyed by
        (seed, episode index), so a (config, seed) pair fully determines
        every trajectory regardless of how episodes interleave.
        """
        self._episode += 1
        self._rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence((self._seed, self._episode)))
        )
        self._t = 0
        rho0 = self._initial_state()
        self._rho = np.broadcast_to(rho0, (self.n_traj, *rho0.shape)).copy()
        obs, _ = self._observe(raw_current=None)
        return np.array([obs])

    def step(self, action) -> tuple[np.ndarray, float, bool, StepRecord]:
        if self._rho is None:
            raise RuntimeError("reset() must be called before step()")
        if self._t >= self.T:
            raise RuntimeError("episode is done; call reset()")
        action = np.clip(np.asarray(action, dtype=float).reshape(-1), -ACTION_BOUND, ACTION_BOUND)
        if action.shape != (self.action_dim,):
            raise ValueError(f"expected action of dimension {self.action_dim}, got {action.shape}")
        h = self._hamiltonian(action)
        probs = self._stepper.cavity_probs(self._rho)
        self._rho, dw = self._stepper.step(self._rho, h, self._rng)
        raw_current = None
        if self.physics.eta > 0:
            raw_current = float(
                np.mean(photocurrent_from_probs(probs, dw, self.physics.eta, self.physics.dt))
            )
        obs, raw = self._observe(raw_current)
        reward = self._reward(obs)
        en = float(np.mean(log_negativity(self.space, self._rho)))
        self._t += 1
        done = self._t >= self.T
        record = StepRecord(
            t=self._t,
            observation=np.array([obs]),
            action=action.copy(),
            reward=reward,
            E_N=en,
            raw_photocurrent=raw,
        )
        return np.array([obs]), reward, done, record

    def mode_expectations(self) -> tuple[float, float]:
        """Current (photon, phonon) expected numbers, trajectory-averaged."""
        n_p = float(np.mean(expectation(self._n_a, self._rho)))
        n_m = float(np.mean(expectation(self._n_b, self._rho)))
        return n_p, n_m

    def fock_distributions(self) -> tuple[np.ndarray, np.ndarray]:
        """Current (photon, phonon) number distributions, trajectory-averaged."""
        rho = self._rho.mean(axis=0)
        return (
            mode_populations(self.space, rho, "cavity"),
            mode_populations(self.space, rho, "mech"),
        )


class LinearEnv(_EnvBase):
    """Beam-splitter regime: scalar action G, target photon number 0.5."""

    action_dim = 1

    def __init__(self, config: LinearEnvConfig, seed: int = 0):
        self.config = config
        space = FockSpace(config.cutoff, config.cutoff)
        super().__init__(space, config.physics(), config.T, config.n_traj, seed)
        self._h0, self._hc = linear_hamiltonian_parts(space, self.physics)
        self._filter = None
        if config.observable == "photocurrent":
            if config.eta <= 0:
                raise ValueError("photocurrent observable requires eta > 0")
            self._filter = CausalGaussianFilter(GaussianFilterConfig(sigma_steps=config.filter_sigma))
        self._reward_floor = -(config.cutoff - 1)

    def _initial_state(self) -> np.ndarray:
        cfg = self.config
        if cfg.initial_state == "pure_10":
            return ket_to_density(fock_ket(self.space, 1, 0))
        p = cfg.mixed_p
        if cfg.initial_state == "mixed_random":
            lo, hi = cfg.mixed_p_range
            p = float(self._rng.uniform(lo, hi))
        rho10 = ket_to_density(fock_ket(self.space, 1, 0))
        rho01 = ket_to_density(fock_ket(self.space, 0, 1))
        return (1.0 - p) * rho10 + p * rho01

    def _hamiltonian(self, action: np.ndarray) -> np.ndarray:
        return self._h0 + action[0] * self._hc

    def _observe(self, raw_current) -> tuple[float, float | None]:
        if self.config.observable == "expected_n":
            return float(np.mean(expectation(self._n_a, self._rho))), raw_current
        if raw_current is None:
            # reset reading: the record does not exist yet, fall back to
            # the noise-free mean without seeding the filter
            return float(np.mean(expectation(self._n_a, self._rho))), None
        return self._filter.push(raw_current), raw_current

    def _reward(self, obs: float) -> float:
        return max(-abs(obs - 0.5), self._reward_floor)

    def reset(self) -> np.ndarray:
        if self._filter is not None:
            self._filter.reset()
        return super().reset()


class NonlinearEnv(_EnvBase):
    """Radiation-pressure regime: actions (delta, alpha_L), vacuum start.

    The target-generating phase observes the entanglement E_N directly
    and rewards proximity to ln 2 with a soft total-excitation penalty;
    the target-utilization phase observes the photon number and tracks a
    per-step target series.
    """

    action_dim = 2

    def __init__(self, config: NonlinearEnvConfig, seed: int = 0):
        self.config = config
        space = FockSpace(config.cutoff, config.cutoff)
        super().__init__(space, config.physics(), config.T, 1, seed)
        self._n_a_op, self._h_static, self._h_drive = nonlinear_hamiltonian_parts(space, self.physics)
        self._reward_floor = -(config.cutoff - 1)
        self._target = None
        if config.target_series is not None:
            self._target = np.asarray(config.target_series, dtype=float)

    def _initial_state(self) -> np.ndarray:
        return ket_to_density(fock_ket(self.space, 0, 0))

    def _hamiltonian(self, action: np.ndarray) -> np.ndarray:
        delta, alpha = action
        return self._h_static - delta * self._n_a_op + alpha * self._h_drive

    def _observe(self, raw_current) -> tuple[float, float | None]:
        if self.config.phase == "target_generating":
            return float(np.mean(log_negativity(self.space, self._rho))), raw_current
        return float(np.mean(expectation(self._n_a, self._rho))), raw_current

    def _reward(self, obs: float) -> float:
        cfg = self.config
        if cfg.phase == "target_generating":
            n_p, n_m = self.mode_expectations()
            value = -abs(obs - LOG2) - abs(n_p + n_m - cfg.reward_a) / cfg.reward_b
        else:
            value = -abs(obs - self._target[self._t])
        return max(value, self._reward_floor)


class VectorEnv:
    """Lock-step batch of identically configured environments.

    Instances differ only by seed; heterogeneous configurations are
    rejected so that batched rollouts stay directly comparable. Stepping
    runs on worker threads when the Hilbert space is large enough for
    the linear algebra to dominate the dispatch overhead.
    """

    def __init__(self, envs: Sequence[_EnvBase], parallel: bool | None = None):
        if not envs:
            raise ValueError("at least one environment is required")
        first = envs[0]
        for env in envs[1:]:
            if env.config != first.config:
                raise ValueError("vectorized environments must share one configuration")
        self.envs = list(envs)
        if parallel is None:
            parallel = len(envs) > 1 and first.space.dim >= 36
        self._pool = ThreadPoolExecutor(max_workers=len(envs)) if parallel else None

    def __len__(self) -> int:
        return len(self.envs)

    @property
    def action_dim(self) -> int:
        return self.envs[0].action_dim

    @property
    def obs_dim(self) -> int:
        return self.envs[0].obs_dim

    @property
    def T(self) -> int:
        return self.envs[0].T

    def reset(self) -> np.ndarray:
        return np.stack([env.reset() for env in self.envs])

    def step(self, actions: np.ndarray):
        actions = np.asarray(actions, dtype=float)
        if actions.shape[0] != len(self.envs):
            raise ValueError(f"expected {len(self.envs)} actions, got {actions.shape[0]}")
        if self._pool is not None:
            results = list(self._pool.map(lambda pair: pair[0].step(pair[1]), zip(self.envs, actions)))
        else:
            results = [env.step(a) for env, a in zip(self.envs, actions)]
        obs = np.stack([r[0] for r in results])
        rewards = np.array([r[1] for r in results])
        dones = np.array([r[2] for r in results])
        records = [r[3] for r in results]
        return obs, rewards, dones, records

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=False)
            self._pool = None


def make_vector_env(config, n_envs: int, base_seed: int = 0, parallel: bool | None = None) -> VectorEnv:
    """Build n_envs instances of the same config with consecutive seeds."""
    cls = LinearEnv if isinstance(config, LinearEnvConfig) else NonlinearEnv
    return VectorEnv([cls(config, seed=base_seed + k) for k in range(n_envs)], parallel=parallel)
