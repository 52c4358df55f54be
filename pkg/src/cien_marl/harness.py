"""Training, evaluation and fine-tuning loops for the three configurations.

Per environment step every agent estimates its influence (CIEN-SAC only),
chooses an action, the environment steps once on the joint action, every
agent stores its own transition and then runs its update: a critic step each
time, actor / CIEN / target steps every ``policy_delay`` critic steps.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env as envlib
from . import nn
from .agent import Agent, AgentDims, IsolationMonitor
from .checkpoint import checkpoint_name, load_checkpoint, save_checkpoint
from .cien import INFLUENCE_DIM
from .config import RunConfig
from .replay import Transition

log = logging.getLogger(__name__)

METRICS_HEADER = ("episode", "return", "final_height", "final_tilt", "terminated_reason",
                  "critic_loss_mean", "actor_objective_mean")

CENTRALIZED_HIDDEN = (512, 512)
DECENTRALIZED_HIDDEN = (256, 256)


class RunAborted(RuntimeError):
    pass


@dataclass
class EpisodeRow:
    episode: int
    ret: float
    final_height: float
    final_tilt: float
    reason: str
    critic_loss_mean: float
    actor_objective_mean: float
    length: int

    def csv_row(self):
        return [self.episode, repr(self.ret), repr(self.final_height), repr(self.final_tilt), self.reason,
                repr(self.critic_loss_mean), repr(self.actor_objective_mean)]


@dataclass
class RunMetrics:
    mode: str
    seed: int
    rows: list[EpisodeRow] = field(default_factory=list)
    evaluations: list[dict] = field(default_factory=list)
    final_eval: dict | None = None
    success: bool = False
    episodes_to_threshold: int | None = None
    total_env_steps: int = 0
    aborted: bool = False
    abort_reason: str | None = None
    cross_agent_accesses: int = 0
    output_dir: str | None = None
    checkpoint: str | None = None

    def summary(self) -> dict:
        fe = self.final_eval or {}
        return {
            "mode": self.mode,
            "seed": self.seed,
            "episodes": len(self.rows),
            "success": self.success,
            "final_eval_height_mean": fe.get("mean_final_height"),
            "final_eval_tilt_mean": fe.get("mean_final_tilt"),
            "final_eval_max_tilt_mean": fe.get("mean_max_tilt"),
            "episodes_to_threshold": self.episodes_to_threshold,
            "total_env_steps": self.total_env_steps,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "cross_agent_accesses": self.cross_agent_accesses,
        }


# -- construction --------------------------------------------------------------

def agent_dims(config: RunConfig) -> AgentDims:
    """Network dimensions implied by the mode."""
    n = config.env.n_agents
    a = envlib.ACTION_DIM
    if config.mode == "centralized":
        hidden = config.hidden or CENTRALIZED_HIDDEN
        return AgentDims(envlib.ARM_DIM * n, envlib.OBJECT_DIM, a * n, 0, tuple(hidden))
    hidden = tuple(config.hidden or DECENTRALIZED_HIDDEN)
    if config.mode == "cien_sac":
        kw = {"cien_hidden": tuple(config.cien_hidden)} if config.cien_hidden else {}
        return AgentDims(envlib.ARM_DIM, envlib.OBJECT_DIM, a, INFLUENCE_DIM, hidden, **kw)
    return AgentDims(envlib.ARM_DIM, envlib.OBJECT_DIM, a, 0, hidden)


def build_networks(config: RunConfig, seed: int = 0) -> list[Agent]:
    """One agent for the centralized baseline, ``n_agents`` independent agents otherwise."""
    dims = agent_dims(config)
    n_learners = 1 if config.mode == "centralized" else config.env.n_agents
    dtype = np.float32 if config.precision == "float32" else np.float64
    monitor = IsolationMonitor()
    rngs = np.random.default_rng(seed).spawn(n_learners)
    return [
        Agent(i, dims, config.hyper, rngs[i], config.env.action_bound, dtype=dtype,
              zero_init=config.zero_init, monitor=monitor)
        for i in range(n_learners)
    ]


# -- observation plumbing ------------------------------------------------------

class Observer:
    """Per-learner ``(s_i, s_o)`` views of the environment state, optionally noisy.

    Noise is drawn independently for every learner; only the object-state
    entries are perturbed.
    """

    def __init__(self, mode: str, n_learners: int, noise=None, rng=None):
        self.mode = mode
        self.n_learners = n_learners
        self.noise = noise
        self.rng = rng

    def __call__(self, state: envlib.EnvState) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for i in range(self.n_learners):
            if self.mode == "centralized":
                obs = envlib.observe(state, "centralized")
            else:
                obs = envlib.observe(state, "decentralized", i)
            if self.noise is not None:
                obs = envlib.noisy_observe(obs, self.noise, self.rng)
            out.append((obs[:-envlib.OBJECT_DIM], obs[-envlib.OBJECT_DIM:]))
        return out


def joint_action(mode: str, actions: list[np.ndarray], n_agents: int) -> np.ndarray:
    if mode == "centralized":
        return actions[0].reshape(n_agents, envlib.ACTION_DIM)
    return np.stack(actions)


# -- evaluation ----------------------------------------------------------------

def run_policy_episode(agents: list[Agent], mode: str, env_config: envlib.EnvConfig, seed: int = 0,
                       deterministic: bool = True) -> list[tuple]:
    """Noiseless episode under the current policies; returns trace rows."""
    observer = Observer(mode, len(agents))
    state = envlib.reset(env_config, seed)
    rows = [(0, state.obj.height, state.obj.tilt, 0.0, False, envlib.TerminationReason.NONE)]
    obs = observer(state)
    while True:
        acts = [ag.act(s_i, s_o, deterministic=deterministic)[0] for ag, (s_i, s_o) in zip(agents, obs)]
        res = envlib.step(state, joint_action(mode, acts, env_config.n_agents), env_config)
        state = res.state
        rows.append((state.step_count, state.obj.height, state.obj.tilt, res.reward, res.terminated, res.reason))
        if res.terminated:
            return rows
        obs = observer(state)


def evaluate_agents(agents: list[Agent], mode: str, env_config: envlib.EnvConfig, episodes: int = 10,
                    trace_dir: str | Path | None = None, success_height: float = 1.30) -> dict:
    """Deterministic (zero-noise) evaluation with observation noise disabled."""
    finals, tilts, max_tilts, reasons, returns = [], [], [], [], []
    for k in range(episodes):
        rows = run_policy_episode(agents, mode, env_config, seed=k)
        if trace_dir is not None:
            Path(trace_dir).mkdir(parents=True, exist_ok=True)
            envlib.write_trace(Path(trace_dir) / f"eval_ep{k}.csv", rows)
        finals.append(rows[-1][1])
        tilts.append(rows[-1][2])
        max_tilts.append(max(r[2] for r in rows))
        reasons.append(rows[-1][5].value)
        returns.append(sum(r[3] for r in rows))
    return {
        "episodes": episodes,
        "mean_final_height": float(np.mean(finals)),
        "mean_final_tilt": float(np.mean(tilts)),
        "mean_max_tilt": float(np.mean(max_tilts)),
        "max_tilt": float(np.max(max_tilts)),
        "mean_return": float(np.mean(returns)),
        "success_rate": float(np.mean([h >= success_height for h in finals])),
        "reasons": reasons,
    }


def evaluate(checkpoint: str | Path, episodes: int = 10, out_dir: str | Path | None = None,
             success_height: float = 1.30, env_overrides: dict | None = None) -> dict:
    """Evaluate a checkpoint; the mode and environment come from its metadata."""
    agents, meta = load_checkpoint(checkpoint)
    env_config = envlib.EnvConfig.from_dict({**meta["env"], **(env_overrides or {})})
    summary = evaluate_agents(agents, meta["mode"], env_config, episodes, out_dir, success_height)
    summary["mode"] = meta["mode"]
    if out_dir is not None:
        with open(Path(out_dir) / "eval_summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
    return summary


# -- training ------------------------------------------------------------------

def _mean(xs):
    return float(np.mean(xs)) if xs else math.nan


class _MetricsWriter:
    def __init__(self, path: Path | None):
        self.path = path
        self.fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "w", newline="")
            self.writer = csv.writer(self.fh)
            self.writer.writerow(METRICS_HEADER)

    def write(self, row: EpisodeRow):
        if self.fh is not None:
            self.writer.writerow(row.csv_row())

    def close(self):
        if self.fh is not None:
            self.fh.close()


def _seed_dir(config: RunConfig, seed: int) -> Path | None:
    if config.output_dir is None:
        return None
    return Path(config.output_dir) / f"{config.mode}_seed{seed}"


def run_training(agents: list[Agent], config: RunConfig, seed: int, env_config: envlib.EnvConfig,
                 episodes: int, out_dir: Path | None, warmup_steps: int, noise=None,
                 start_episode: int = 0) -> RunMetrics:
    """The shared step loop behind :func:`train` and :func:`fine_tune`."""
    mode = config.mode
    n_agents = env_config.n_agents
    master = np.random.default_rng([seed, 1])
    observer = Observer(mode, len(agents), noise, master.spawn(1)[0])
    metrics = RunMetrics(mode, seed, output_dir=str(out_dir) if out_dir else None)
    writer = _MetricsWriter(out_dir / "metrics.csv" if out_dir else None)
    total_steps = 0

    def save(ep):
        if out_dir is None:
            return None
        path = out_dir / checkpoint_name(mode, seed, ep)
        save_checkpoint(path, agents, mode, env_config.to_dict(), {"seed": seed, "episode": ep})
        return str(path)

    try:
        for ep in range(start_episode + 1, start_episode + episodes + 1):
            if config.max_env_steps is not None and total_steps >= config.max_env_steps:
                break
            state = envlib.reset(env_config, seed)
            obs = observer(state)
            ret, losses, objectives = 0.0, [], []
            while True:
                acts, infl = [], []
                for ag, (s_i, s_o) in zip(agents, obs):
                    if total_steps < warmup_steps:
                        a, c = ag.random_action(), ag.influence(s_o)
                    else:
                        a, c = ag.act(s_i, s_o)
                    acts.append(a)
                    infl.append(c)
                res = envlib.step(state, joint_action(mode, acts, n_agents), env_config)
                total_steps += 1
                next_obs = observer(res.state)
                done = res.reason.is_safety
                for ag, (s_i, s_o), (s_i2, s_o2), a, c in zip(agents, obs, next_obs, acts, infl):
                    ag.store(Transition(s_i, s_o, a, c, res.reward, s_i2, s_o2, done))
                for ag in agents:
                    if ag.ready():
                        loss, obj = ag.update()
                        losses.append(loss)
                        if obj is not None:
                            objectives.append(obj)
                ret += res.reward
                state, obs = res.state, next_obs
                if res.terminated:
                    break
            row = EpisodeRow(ep, ret, state.obj.height, state.obj.tilt, res.reason.value,
                             _mean(losses), _mean(objectives), state.step_count)
            metrics.rows.append(row)
            writer.write(row)
            if config.checkpoint_every and ep % config.checkpoint_every == 0:
                save(ep)
            if config.eval_every and ep % config.eval_every == 0:
                ev = evaluate_agents(agents, mode, env_config, config.eval_episodes,
                                     success_height=config.success_height)
                metrics.evaluations.append({"episode": ep, "env_steps": total_steps, **ev})
                log.info("%s seed %d ep %d steps %d eval height %.4f", mode, seed, ep, total_steps,
                         ev["mean_final_height"])
                if ev["mean_final_height"] >= config.success_height and metrics.episodes_to_threshold is None:
                    metrics.episodes_to_threshold = ep
                    if config.stop_on_success:
                        break
    except nn.NonFiniteError as exc:
        metrics.aborted = True
        metrics.abort_reason = str(exc)
        log.error("run aborted: %s", exc)
    finally:
        writer.close()
    metrics.total_env_steps = total_steps
    metrics.cross_agent_accesses = agents[0].monitor.cross_agent_accesses
    last = metrics.rows[-1].episode if metrics.rows else start_episode
    if not metrics.aborted:
        metrics.final_eval = evaluate_agents(agents, mode, env_config, config.eval_episodes,
                                             out_dir / "eval" if out_dir else None, config.success_height)
        metrics.success = metrics.final_eval["mean_final_height"] >= config.success_height
        metrics.checkpoint = save(last)
    if out_dir is not None:
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(metrics.summary(), fh, indent=2)
        with open(out_dir / "evaluations.json", "w") as fh:
            json.dump(metrics.evaluations, fh, indent=2)
    return metrics


def train_seed(config: RunConfig, seed: int) -> RunMetrics:
    agents = build_networks(config, seed)
    return run_training(agents, config, seed, config.env, config.episodes, _seed_dir(config, seed),
                        config.warmup_steps, noise=config.noise)


def _worker_count(n_jobs: int) -> int:
    try:
        cap = int(os.environ.get("CIEN_MARL_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_jobs))


def train(config: RunConfig) -> list[RunMetrics]:
    """Train every seed in ``config.seeds``; seeds run in parallel up to ``CIEN_MARL_THREADS`` workers."""
    workers = _worker_count(len(config.seeds))
    if workers == 1:
        return [train_seed(config, s) for s in config.seeds]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(train_seed, [config] * len(config.seeds), config.seeds))


def fine_tune(config: RunConfig, seed: int | None = None) -> RunMetrics:
    """Continue training a checkpoint under observation noise and a reduced target height.

    Replay starts empty and there is no random warm-up: the loaded policy acts from the first step.
    """
    ft = config.fine_tune
    if ft is None:
        raise ValueError("config has no fine_tune section")
    agents, meta = load_checkpoint(ft.source)
    seed = config.seeds[0] if seed is None else seed
    if meta["mode"] != config.mode:
        config = config.with_(mode=meta["mode"])
    env_config = envlib.EnvConfig.from_dict({**meta["env"], "target_height": ft.target_height})
    rngs = np.random.default_rng([seed, 2]).spawn(len(agents))
    for ag, rng in zip(agents, rngs):
        ag.rng = rng
        ag.reset_buffer()
    out_dir = None
    if config.output_dir is not None:
        out_dir = Path(config.output_dir) / f"{config.mode}_seed{seed}_finetune"
    start = int(meta.get("episode", 0))
    return run_training(agents, config, seed, env_config, ft.episodes, out_dir, 0, noise=config.noise,
                        start_episode=start)
