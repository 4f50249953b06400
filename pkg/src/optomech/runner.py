"""Experiment orchestration: training loops, frozen-policy evaluation,
parameter sweeps, the two-phase pipeline, and tidy plot-data export.

Every run writes a self-describing directory:
  config.yaml        resolved configuration
  summary.json       config hash plus end-of-run statistics
  metrics.csv        one row per episode (episode, e_n, reward)
  steps.csv          per-step records of the final evaluation episode
  populations.csv    end-of-episode Fock distributions (evaluation runs)
  checkpoint.npz     trained parameters (trainable agents)
  lambda_grid.json   gain-selection table (bayesian runs without a gain)
  target_series.csv  exported photon-number target (two-phase pipeline)

Identical config and seed reproduce byte-identical metric tables; floats
are written with repr-stable formatting. Divergence dumps diagnostics to
divergence.json before the exception propagates.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .agents.baselines import BayesianController, RandomController, select_lambda
from .agents.checkpoint import load_checkpoint, save_checkpoint
from .agents.ppo import EpisodeData, PpoAgent, RecurrentPpoAgent
from .config import ExperimentConfig, apply_overrides, config_hash, from_dict, save_config, to_dict
from .envs import LinearEnv, NonlinearEnv, make_vector_env
from .errors import CheckpointMismatchError, IntegrationBlowupError, TrainingDivergedError
from .observe import LOG2, moving_average

SUMMARY_EPISODES = 10  # end-episode window for reported statistics
MA_WINDOW = 100  # moving-average window for exported curves
LAMBDA_SEED_OFFSET = 100_000  # keeps gain-selection noise disjoint from run noise

SWEEP_AXES = {"kappa": "env.kappa", "eta": "env.eta", "T": "env.T", "mixed_p": "env.mixed_p"}


@dataclass(frozen=True)
class EpisodeRow:
    episode: int
    e_n: float  # episode-mean log negativity of the designated env
    reward: float  # episode return, averaged over parallel envs


@dataclass
class RunLog:
    rows: list
    summary: dict
    steps: list | None = None
    populations: tuple | None = None
    lambda_table: dict | None = None


def _fmt(value) -> str:
    if value is None:
        return ""
    return f"{value:.12g}"


def build_agent(config: ExperimentConfig, obs_dim: int, action_dim: int, lam: float | None = None):
    if config.agent == "ppo":
        return PpoAgent(obs_dim, action_dim, hyper=config.hyper, seed=config.seed, hidden=config.hidden)
    if config.agent == "recurrent_ppo":
        return RecurrentPpoAgent(
            obs_dim,
            action_dim,
            hyper=config.hyper,
            seed=config.seed,
            hidden=config.hidden,
            lstm_dim=config.lstm_dim,
        )
    if config.agent == "bayesian":
        resolved = lam if lam is not None else config.lam
        if resolved is None:
            raise ValueError("bayesian agent needs a gain; give lam or run selection first")
        return BayesianController(resolved)
    return RandomController(action_dim, seed=config.seed)


def _resolve_gain(config: ExperimentConfig):
    """Grid-search the bayesian gain when the config leaves it open."""
    if config.agent != "bayesian" or config.lam is not None:
        return config.lam, None

    def factory(seed):
        return LinearEnv(config.env, seed=seed)

    lam, table = select_lambda(
        factory, episodes=config.lambda_episodes, base_seed=config.seed + LAMBDA_SEED_OFFSET
    )
    return float(lam), table


def _rollout_round(venv, agent, deterministic: bool, collect: bool, track_photon: bool = False):
    """One lock-step episode across the vector env.

    Returns (episode_data, e_n, reward, records, photon_trace) where
    e_n is the designated (last) env's episode-mean log negativity,
    reward the env-averaged episode return, and records the designated
    env's per-step records.
    """
    n = len(venv.envs)
    seg_len = agent.hyper.segment_len if collect and agent.recurrent else None
    obs = venv.reset()
    agent.begin_episodes(n)
    if collect:
        buf_obs = [[] for _ in range(n)]
        buf_u = [[] for _ in range(n)]
        buf_logp = [[] for _ in range(n)]
        buf_val = [[] for _ in range(n)]
        buf_rew = [[] for _ in range(n)]
        seg_states = [dict() for _ in range(n)]
    en_steps = []
    returns = np.zeros(n)
    records_last = []
    photon = [] if track_photon else None
    for t in range(venv.T):
        if seg_len is not None and t % seg_len == 0:
            ah, ac, ch, cc = agent.hidden_states()
            for i in range(n):
                seg_states[i][t] = (ah[i : i + 1], ac[i : i + 1], ch[i : i + 1], cc[i : i + 1])
        actions, aux = agent.act(obs, deterministic=deterministic)
        new_obs, rewards, dones, records = venv.step(actions)
        if collect:
            for i in range(n):
                buf_obs[i].append(obs[i])
                buf_u[i].append(aux["u"][i])
                buf_logp[i].append(aux["logp"][i])
                buf_val[i].append(aux["value"][i])
                buf_rew[i].append(rewards[i])
        returns += rewards
        en_steps.append(records[-1].E_N)
        records_last.append(records[-1])
        if track_photon:
            photon.append(venv.envs[-1].mode_expectations()[0])
        obs = new_obs
    episodes = []
    if collect:
        for i in range(n):
            episodes.append(
                EpisodeData(
                    obs=np.array(buf_obs[i]),
                    u=np.array(buf_u[i]),
                    logp=np.array(buf_logp[i]),
                    rewards=np.array(buf_rew[i]),
                    values=np.array(buf_val[i]),
                    seg_states=seg_states[i],
                )
            )
    e_n = float(np.mean(en_steps))
    reward = float(returns.mean())
    return episodes, e_n, reward, records_last, photon


def _train_loop(config: ExperimentConfig, venv, agent, trace_store: list | None = None):
    """Stochastic rollouts and updates; one metrics row per episode round."""
    rows = []
    episode = 0
    track = trace_store is not None
    for _ in range(config.n_updates):
        batch = []
        for _ in range(config.hyper.episodes_per_update):
            eps, e_n, reward, _, photon = _rollout_round(
                venv, agent, deterministic=False, collect=True, track_photon=track
            )
            batch.extend(eps)
            rows.append(EpisodeRow(episode, e_n, reward))
            if track:
                trace_store.append(np.array(photon))
            episode += 1
        agent.update(batch)
    return rows


def _eval_loop(config: ExperimentConfig, venv, agent):
    """Frozen-policy episodes; keeps the final episode's step records."""
    rows = []
    records = None
    for episode in range(config.eval_episodes):
        _, e_n, reward, records, _ = _rollout_round(
            venv, agent, deterministic=config.eval_deterministic, collect=False
        )
        rows.append(EpisodeRow(episode, e_n, reward))
    populations = venv.envs[-1].fock_distributions() if rows else None
    return rows, records, populations


def _summarize(rows, extra: dict | None = None) -> dict:
    tail = rows[-SUMMARY_EPISODES:]
    summary = {
        "n_episodes": len(rows),
        "summary_episodes": len(tail),
    }
    if tail:
        e_n = np.array([r.e_n for r in tail])
        rew = np.array([r.reward for r in tail])
        summary.update(
            e_n_mean=float(e_n.mean()),
            e_n_std=float(e_n.std()),
            e_n_percent_mean=float(100.0 * e_n.mean() / LOG2),
            e_n_percent_std=float(100.0 * e_n.std() / LOG2),
            reward_mean=float(rew.mean()),
            reward_std=float(rew.std()),
        )
    else:
        summary.update(
            e_n_mean=None,
            e_n_std=None,
            e_n_percent_mean=None,
            e_n_percent_std=None,
            reward_mean=None,
            reward_std=None,
        )
    if extra:
        summary.update(extra)
    return summary


def _write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "e_n", "reward"])
        for row in rows:
            writer.writerow([row.episode, _fmt(row.e_n), _fmt(row.reward)])


def _read_metrics(path):
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(EpisodeRow(int(rec["episode"]), float(rec["e_n"]), float(rec["reward"])))
    return rows


def _write_steps(path, records) -> None:
    action_dim = len(records[0].action) if records else 1
    header = ["t", "observation"] + [f"action_{k}" for k in range(action_dim)] + [
        "reward",
        "e_n",
        "raw_photocurrent",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in records or []:
            writer.writerow(
                [rec.t, _fmt(rec.observation[0])]
                + [_fmt(a) for a in rec.action]
                + [_fmt(rec.reward), _fmt(rec.E_N), _fmt(rec.raw_photocurrent)]
            )


def _write_populations(path, populations) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "index", "probability"])
        if populations is None:
            return
        for mode, dist in zip(("cavity", "mech"), populations):
            for index, prob in enumerate(dist):
                writer.writerow([mode, index, _fmt(prob)])


def _write_summary(outdir: Path, summary: dict) -> None:
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _dump_divergence(outdir: Path, exc: Exception, context: dict) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc), **context}
    (outdir / "divergence.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _prepare_outdir(config: ExperimentConfig, outdir) -> Path:
    out = Path(outdir) if outdir is not None else Path(config.outdir) / config.name
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.yaml")
    return out


def train(config: ExperimentConfig, outdir=None, trace_store: list | None = None) -> RunLog:
    """Train (or, for the fixed controllers, evaluate) per the config.

    Trainable agents run n_updates PPO updates and save a checkpoint;
    bayesian/random configs produce an evaluation-only log. trace_store,
    when given, receives the designated env's per-step photon trace for
    every training episode (used by the two-phase pipeline).
    """
    out = _prepare_outdir(config, outdir)
    t0 = time.time()
    lam, lam_table = _resolve_gain(config)
    if lam_table is not None:
        (out / "lambda_grid.json").write_text(
            json.dumps({"selected": lam, "table": lam_table}, indent=2, sort_keys=True) + "\n"
        )
    venv = make_vector_env(config.env, config.n_envs, base_seed=config.seed)
    agent = build_agent(config, venv.obs_dim, venv.action_dim, lam=lam)
    steps = populations = None
    try:
        if config.trainable:
            rows = _train_loop(config, venv, agent, trace_store=trace_store)
        else:
            rows, steps, populations = _eval_loop(config, venv, agent)
    except (TrainingDivergedError, IntegrationBlowupError) as exc:
        _dump_divergence(out, exc, {"config_hash": config_hash(config)})
        raise
    finally:
        venv.close()
    if config.trainable:
        save_checkpoint(
            out / "checkpoint.npz",
            agent,
            extra_meta={"config_hash": config_hash(config), "name": config.name},
        )
    extra = {
        "name": config.name,
        "agent": config.agent,
        "regime": config.regime,
        "config_hash": config_hash(config),
        "mode": "train" if config.trainable else "eval",
        "wall_time_s": round(time.time() - t0, 3),
    }
    if lam is not None and config.agent == "bayesian":
        extra["lam"] = lam
    summary = _summarize(rows, extra)
    _write_metrics(out / "metrics.csv", rows)
    if steps is not None:
        _write_steps(out / "steps.csv", steps)
        _write_populations(out / "populations.csv", populations)
    _write_summary(out, summary)
    return RunLog(rows=rows, summary=summary, steps=steps, populations=populations, lambda_table=lam_table)


def evaluate(config: ExperimentConfig, checkpoint=None, outdir=None) -> RunLog:
    """Frozen-policy rollouts on a single env; trainable agents come
    from a checkpoint, fixed controllers are built directly."""
    out = _prepare_outdir(config, outdir)
    t0 = time.time()
    venv = make_vector_env(config.env, 1, base_seed=config.seed)
    extra = {
        "name": config.name,
        "agent": config.agent,
        "regime": config.regime,
        "config_hash": config_hash(config),
        "mode": "eval",
    }
    lam_table = None
    try:
        if config.trainable:
            if checkpoint is None:
                raise ValueError(f"evaluating a {config.agent} agent requires a checkpoint")
            agent = load_checkpoint(checkpoint, expected_kind=config.agent)
            if agent.obs_dim != venv.obs_dim or agent.action_dim != venv.action_dim:
                raise CheckpointMismatchError(
                    f"checkpoint dimensions ({agent.obs_dim}, {agent.action_dim}) do not match "
                    f"the {config.regime} environment ({venv.obs_dim}, {venv.action_dim})"
                )
            recorded = (agent.checkpoint_meta.get("extra") or {}).get("config_hash")
            extra["checkpoint_config_hash"] = recorded
            extra["config_hash_matches"] = recorded == config_hash(config)
        else:
            lam, lam_table = _resolve_gain(config)
            if lam_table is not None:
                (out / "lambda_grid.json").write_text(
                    json.dumps({"selected": lam, "table": lam_table}, indent=2, sort_keys=True) + "\n"
                )
            if lam is not None and config.agent == "bayesian":
                extra["lam"] = lam
            agent = build_agent(config, venv.obs_dim, venv.action_dim, lam=lam)
        rows, steps, populations = _eval_loop(config, venv, agent)
    except (TrainingDivergedError, IntegrationBlowupError) as exc:
        _dump_divergence(out, exc, {"config_hash": config_hash(config)})
        raise
    finally:
        venv.close()
    extra["wall_time_s"] = round(time.time() - t0, 3)
    summary = _summarize(rows, extra)
    _write_metrics(out / "metrics.csv", rows)
    if steps is not None:
        _write_steps(out / "steps.csv", steps)
        _write_populations(out / "populations.csv", populations)
    _write_summary(out, summary)
    return RunLog(rows=rows, summary=summary, steps=steps, populations=populations, lambda_table=lam_table)


def sweep(config: ExperimentConfig, axis: str, values, outdir=None, checkpoint=None) -> list[dict]:
    """One evaluation per value of the swept key; failures are isolated.

    axis is a shorthand ({kappa, eta, T, mixed_p}) or any dotted config
    key. Trainable agents need a checkpoint; fixed controllers evaluate
    directly. Writes sweep.csv plus one run directory per point.
    """
    key = SWEEP_AXES.get(axis, axis)
    out = Path(outdir) if outdir is not None else Path(config.outdir) / f"{config.name}_sweep"
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for value in values:
        point = {"axis": axis, "value": value, "failed": False, "error": ""}
        try:
            sub_dict = apply_overrides(to_dict(config), [f"{key}={value}"])
            sub_dict["name"] = f"{config.name}_{axis}_{value}"
            sub = from_dict(sub_dict)
            log = evaluate(sub, checkpoint=checkpoint, outdir=out / f"point_{value}")
            point.update(
                e_n_mean=log.summary["e_n_mean"],
                e_n_std=log.summary["e_n_std"],
                e_n_percent_mean=log.summary["e_n_percent_mean"],
                e_n_percent_std=log.summary["e_n_percent_std"],
                reward_mean=log.summary["reward_mean"],
            )
        except Exception as exc:  # per-point isolation is the contract
            point.update(failed=True, error=str(exc), e_n_mean=None, e_n_std=None,
                         e_n_percent_mean=None, e_n_percent_std=None, reward_mean=None)
        results.append(point)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["axis", "value", "e_n_mean", "e_n_std", "e_n_percent_mean", "e_n_percent_std", "reward_mean", "failed", "error"]
        )
        for p in results:
            writer.writerow(
                [p["axis"], p["value"], _fmt(p["e_n_mean"]), _fmt(p["e_n_std"]),
                 _fmt(p["e_n_percent_mean"]), _fmt(p["e_n_percent_std"]),
                 _fmt(p["reward_mean"]), p["failed"], p["error"]]
            )
    (out / "sweep_summary.json").write_text(
        json.dumps({"config_hash": config_hash(config), "axis": axis,
                    "values": [p["value"] for p in results],
                    "failed": [p["value"] for p in results if p["failed"]]},
                   indent=2, sort_keys=True) + "\n"
    )
    return results


def _phase1_improved(rewards) -> bool:
    """Convergence gate: the reward moving average over the last decile
    of episodes must exceed the first decile."""
    ma = moving_average(np.asarray(rewards), MA_WINDOW)
    decile = max(1, len(ma) // 10)
    return float(ma[-decile:].mean()) > float(ma[:decile].mean())


def select_target_episode(rows) -> int:
    """Among the final 10% of episodes, the one with highest e_n."""
    n = len(rows)
    start = max(0, n - max(1, n // 10))
    best = max(rows[start:], key=lambda r: r.e_n)
    return best.episode


def two_phase(config: ExperimentConfig, outdir=None) -> dict:
    """Nonlinear pipeline: train the entanglement-rewarded agent, export
    its best converged photon trace as the target, then train the
    recurrent agent against that target alone."""
    if config.regime != "nonlinear":
        raise ValueError("the two-phase pipeline is defined for the nonlinear regime")
    out = Path(outdir) if outdir is not None else Path(config.outdir) / config.name
    out.mkdir(parents=True, exist_ok=True)

    env1 = replace(config.env, phase="target_generating", target_series=None)
    cfg1 = replace(config, name=f"{config.name}_phase1", agent="ppo", env=env1)
    traces: list[np.ndarray] = []
    log1 = train(cfg1, outdir=out / "phase1", trace_store=traces)

    rewards = [r.reward for r in log1.rows]
    if not rewards or not _phase1_improved(rewards):
        diag = {
            "error": "phase 1 reward did not improve",
            "episodes": len(rewards),
            "ma_window": MA_WINDOW,
            "first_decile_ma": float(np.mean(moving_average(np.array(rewards), MA_WINDOW)[: max(1, len(rewards) // 10)])) if rewards else None,
            "last_decile_ma": float(np.mean(moving_average(np.array(rewards), MA_WINDOW)[-max(1, len(rewards) // 10):])) if rewards else None,
        }
        (out / "phase1_divergence.json").write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n")
        raise RuntimeError("two-phase pipeline aborted: phase 1 reward did not improve")

    target_episode = select_target_episode(log1.rows)
    target = traces[target_episode]
    with open(out / "target_series.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "target"])
        for t, value in enumerate(target):
            writer.writerow([t, _fmt(value)])

    env2 = replace(config.env, phase="target_utilization", target_series=tuple(float(x) for x in target))
    hyper2 = config.hyper
    if config.phase2_episodes_per_update is not None:
        hyper2 = replace(hyper2, episodes_per_update=config.phase2_episodes_per_update)
    cfg2 = replace(
        config,
        name=f"{config.name}_phase2",
        agent="recurrent_ppo",
        env=env2,
        hyper=hyper2,
        n_updates=config.n_updates if config.phase2_n_updates is None else config.phase2_n_updates,
    )
    log2 = train(cfg2, outdir=out / "phase2")

    overview = {
        "config_hash": config_hash(config),
        "phase1": log1.summary,
        "phase2": log2.summary,
        "target_episode": target_episode,
        "target_length": len(target),
    }
    (out / "two_phase_summary.json").write_text(json.dumps(overview, indent=2, sort_keys=True) + "\n")
    return {
        "phase1": log1,
        "phase2": log2,
        "target": target,
        "target_episode": target_episode,
        "outdir": out,
    }


EXPORT_KINDS = ("episodes", "steps", "populations", "target", "sweep")


def export_plot_data(run_dir, kind: str, out_path=None) -> Path:
    """Tidy long-format tables from a run directory.

    episodes: per-episode metrics plus window-100 moving averages and
    the percent-of-maximal entanglement column. The other kinds re-emit
    the stored tables under stable export names.
    """
    run = Path(run_dir)
    if kind not in EXPORT_KINDS:
        raise ValueError(f"unknown export kind {kind!r}; expected one of {EXPORT_KINDS}")
    if kind == "episodes":
        rows = _read_metrics(run / "metrics.csv")
        dest = Path(out_path) if out_path is not None else run / "export_episodes.csv"
        e_n = np.array([r.e_n for r in rows])
        rew = np.array([r.reward for r in rows])
        ma_e = moving_average(e_n, MA_WINDOW) if len(rows) else []
        ma_r = moving_average(rew, MA_WINDOW) if len(rows) else []
        with open(dest, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "e_n", "e_n_percent", "reward", "e_n_ma", "reward_ma"])
            for k, row in enumerate(rows):
                writer.writerow(
                    [row.episode, _fmt(row.e_n), _fmt(100.0 * row.e_n / LOG2),
                     _fmt(row.reward), _fmt(ma_e[k]), _fmt(ma_r[k])]
                )
        return dest
    source = {
        "steps": "steps.csv",
        "populations": "populations.csv",
        "target": "target_series.csv",
        "sweep": "sweep.csv",
    }[kind]
    src = run / source
    if not src.exists():
        raise FileNotFoundError(f"{src} does not exist; run the producing command first")
    dest = Path(out_path) if out_path is not None else run / f"export_{kind}.csv"
    dest.write_text(src.read_text())
    return dest
