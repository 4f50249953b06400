"""Versioned npz checkpoints for the learning agents.

Layout (format version 1): a single .npz holding
  meta        json string: format version, agent kind, dimensions,
              hyperparameters, update count, seed
  a<i>, c<i>  actor-side and critic-side parameter arrays in
              construction order (the actor side includes the policy
              log-std as its final entry)
  oa_*, oc_*  Adam moment arrays and step counters for each side
  rng_*       Philox sampling-stream state
Loading rebuilds the agent from meta and restores every array, so a
resumed run continues the exact parameter and sampling trajectory.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from ..errors import CheckpointMismatchError
from .ppo import PpoAgent, PpoHyperparams, RecurrentPpoAgent

FORMAT_VERSION = 1

_AGENT_CLASSES = {"ppo": PpoAgent, "recurrent_ppo": RecurrentPpoAgent}


def _rng_arrays(rng: np.random.Generator) -> dict[str, np.ndarray]:
    state = rng.bit_generator.state
    inner = state["state"]
    return {
        "rng_counter": np.asarray(inner["counter"], dtype=np.uint64),
        "rng_key": np.asarray(inner["key"], dtype=np.uint64),
        "rng_buffer": np.asarray(state["buffer"], dtype=np.uint64),
        "rng_scalars": np.array(
            [state["buffer_pos"], state["has_uint32"], state["uinteger"]], dtype=np.uint64
        ),
    }


def _restore_rng(rng: np.random.Generator, arrays) -> None:
    scalars = arrays["rng_scalars"]
    rng.bit_generator.state = {
        "bit_generator": "Philox",
        "state": {"counter": arrays["rng_counter"], "key": arrays["rng_key"]},
        "buffer": arrays["rng_buffer"],
        "buffer_pos": int(scalars[0]),
        "has_uint32": int(scalars[1]),
        "uinteger": int(scalars[2]),
    }


def save_checkpoint(path, agent, extra_meta: dict | None = None) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": agent.kind,
        "obs_dim": agent.obs_dim,
        "action_dim": agent.action_dim,
        "hyper": dataclasses.asdict(agent.hyper),
        "hidden": list(agent.actor.hidden),
        "seed": agent.seed,
        "update_count": agent.update_count,
    }
    if agent.kind == "recurrent_ppo":
        meta["lstm_dim"] = agent.actor.lstm_dim
    if extra_meta:
        meta["extra"] = extra_meta
    arrays = {"meta": np.array(json.dumps(meta))}
    for i, p in enumerate(agent.actor_opt.params):
        arrays[f"a{i}"] = p.value
    for i, p in enumerate(agent.critic_opt.params):
        arrays[f"c{i}"] = p.value
    for key, value in agent.actor_opt.state_arrays().items():
        arrays[f"oa_{key}"] = value
    for key, value in agent.critic_opt.state_arrays().items():
        arrays[f"oc_{key}"] = value
    arrays.update(_rng_arrays(agent.rng))
    np.savez(path, **arrays)


def read_meta(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return json.loads(str(data["meta"]))


def load_checkpoint(path, expected_kind: str | None = None):
    """Rebuild the saved agent; raises CheckpointMismatchError on any
    format, kind, or shape disagreement."""
    with np.load(path, allow_pickle=False) as data:
        try:
            meta = json.loads(str(data["meta"]))
        except KeyError as exc:
            raise CheckpointMismatchError("checkpoint has no meta record") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointMismatchError(
                f"checkpoint format {meta.get('format_version')} unsupported (expected {FORMAT_VERSION})"
            )
        kind = meta["kind"]
        if expected_kind is not None and kind != expected_kind:
            raise CheckpointMismatchError(f"checkpoint holds a {kind} agent, expected {expected_kind}")
        if kind not in _AGENT_CLASSES:
            raise CheckpointMismatchError(f"unknown agent kind {kind!r}")
        hyper = PpoHyperparams(**meta["hyper"])
        kwargs = {"hidden": tuple(meta["hidden"])}
        if kind == "recurrent_ppo":
            kwargs["lstm_dim"] = meta["lstm_dim"]
        agent = _AGENT_CLASSES[kind](
            meta["obs_dim"], meta["action_dim"], hyper=hyper, seed=meta["seed"], **kwargs
        )
        agent.update_count = meta["update_count"]
        for i, p in enumerate(agent.actor_opt.params):
            stored = data[f"a{i}"]
            if stored.shape != p.value.shape:
                raise CheckpointMismatchError(f"actor parameter {i} shape mismatch")
            p.value[...] = stored
        for i, p in enumerate(agent.critic_opt.params):
            stored = data[f"c{i}"]
            if stored.shape != p.value.shape:
                raise CheckpointMismatchError(f"critic parameter {i} shape mismatch")
            p.value[...] = stored
        agent.actor_opt.load_state_arrays({k[3:]: data[k] for k in data.files if k.startswith("oa_")})
        agent.critic_opt.load_state_arrays({k[3:]: data[k] for k in data.files if k.startswith("oc_")})
        _restore_rng(agent.rng, data)
        agent.checkpoint_meta = meta
        return agent
