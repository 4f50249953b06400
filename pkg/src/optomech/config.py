"""Experiment configuration: a dataclass tree that round-trips through
YAML, accepts dotted-key overrides, and hashes canonically so every
artifact can state exactly which configuration produced it."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .agents.ppo import PpoHyperparams
from .envs import LinearEnvConfig, NonlinearEnvConfig

REGIMES = ("linear", "nonlinear")
AGENT_KINDS = ("ppo", "recurrent_ppo", "bayesian", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs: regime, environment, agent, budgets.

    The master seed derives every stream: environment i uses seed + i
    with per-episode substreams, the agent draws from its own seed-
    sequence spawn. episodes per update = hyper.episodes_per_update *
    n_envs (lock-step rounds across the vector env).
    """

    name: str = "run"
    regime: str = "linear"
    agent: str = "ppo"
    env: LinearEnvConfig | NonlinearEnvConfig = field(default_factory=LinearEnvConfig)
    hyper: PpoHyperparams = field(default_factory=PpoHyperparams)
    seed: int = 0
    n_envs: int = 1
    n_updates: int = 0
    eval_episodes: int = 10
    eval_deterministic: bool = True
    lam: float | None = None  # bayesian gain; None selects by grid search
    lambda_episodes: int = 3  # episodes per grid point during selection
    hidden: tuple[int, ...] = (256, 128, 64)
    lstm_dim: int = 256
    # two-phase pipeline only; None reuses the shared values above
    phase2_episodes_per_update: int | None = None
    phase2_n_updates: int | None = None
    outdir: str = "runs"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.agent not in AGENT_KINDS:
            raise ValueError(f"agent must be one of {AGENT_KINDS}, got {self.agent!r}")
        expected_env = LinearEnvConfig if self.regime == "linear" else NonlinearEnvConfig
        if not isinstance(self.env, expected_env):
            raise ValueError(
                f"{self.regime} regime requires {expected_env.__name__}, got {type(self.env).__name__}"
            )
        if self.agent == "bayesian" and self.regime != "linear":
            raise ValueError("the bayesian controller is a scalar feedback law for the linear regime")
        if self.n_envs < 1:
            raise ValueError("n_envs must be positive")
        if self.n_updates < 0 or self.eval_episodes < 0:
            raise ValueError("budgets must be nonnegative")
        if self.lam is not None and self.lam <= 0:
            raise ValueError("lam must be positive when given")
        if self.lambda_episodes < 1:
            raise ValueError("lambda_episodes must be positive")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.lstm_dim < 1:
            raise ValueError("lstm_dim must be positive")
        if self.phase2_episodes_per_update is not None and self.phase2_episodes_per_update < 1:
            raise ValueError("phase2_episodes_per_update must be positive when given")
        if self.phase2_n_updates is not None and self.phase2_n_updates < 0:
            raise ValueError("phase2_n_updates must be nonnegative when given")

    @property
    def trainable(self) -> bool:
        return self.agent in ("ppo", "recurrent_ppo")


def to_dict(config: ExperimentConfig) -> dict:
    """Plain nested dict (lists for tuples) suitable for YAML/JSON."""
    d = dataclasses.asdict(config)
    d["hidden"] = list(config.hidden)
    env = d["env"]
    if "mixed_p_range" in env:
        env["mixed_p_range"] = list(env["mixed_p_range"])
    if env.get("target_series") is not None:
        env["target_series"] = list(env["target_series"])
    return d


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    regime = data.get("regime", "linear")
    env_data = dict(data.get("env") or {})
    env_cls = LinearEnvConfig if regime == "linear" else NonlinearEnvConfig
    try:
        if "mixed_p_range" in env_data:
            env_data["mixed_p_range"] = tuple(env_data["mixed_p_range"])
        if env_data.get("target_series") is not None:
            env_data["target_series"] = tuple(env_data["target_series"])
        data["env"] = env_cls(**env_data)
    except TypeError as exc:
        raise ValueError(f"bad env config for {regime} regime: {exc}") from exc
    try:
        data["hyper"] = PpoHyperparams(**(data.get("hyper") or {}))
    except TypeError as exc:
        raise ValueError(f"bad hyperparameters: {exc}") from exc
    if "hidden" in data:
        data["hidden"] = tuple(data["hidden"])
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ValueError(f"bad config: {exc}") from exc


def parse_scalar(raw: str):
    """YAML-typed scalar; also accepts dot-free scientific notation
    (YAML 1.1 reads 1e-3 as a string)."""
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            pass
        try:
            return float(value)
        except ValueError:
            pass
    return value


def apply_overrides(data: dict, overrides) -> dict:
    """Apply dotted-key=value strings; values parse as YAML scalars."""
    data = json.loads(json.dumps(data))  # deep copy, plain types only
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        if not all(parts):
            raise ValueError(f"override {item!r} has an empty key segment")
        node = data
        for part in parts[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = {}
                node[part] = nxt
            if not isinstance(nxt, dict):
                raise ValueError(f"override {item!r} descends into non-mapping {part!r}")
            node = nxt
        node[parts[-1]] = parse_scalar(raw)
    return data


def load_config(path, overrides=()) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    if overrides:
        data = apply_overrides(data, overrides)
    return from_dict(data)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(config), sort_keys=True))


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
