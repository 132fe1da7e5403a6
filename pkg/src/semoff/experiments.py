"""Evaluation harness: run policies over seeded snapshots, load trained runs, sweep k."""
from __future__ import annotations

import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ppo
from .baselines import DiscreteActionGrid, DQNAgent, dqn_policy, exhaustive_policy, static_policy
from .config import ScenarioConfig
from .env import OffloadingEnv
from .marl import Agent, AgentPool
from .nnet import load_checkpoint

log = logging.getLogger(__name__)

STATIC_POLICIES = ("exhaustive", "local", "remote", "random")
ALL_POLICIES = ("mappo", "dqn") + STATIC_POLICIES


class MissingArtifact(FileNotFoundError):
    pass


@dataclass(frozen=True)
class EpisodeSummary:
    energy_J: float
    completion_step: int | None
    violations: int
    reward: float

    @property
    def completed(self) -> bool:
        return self.completion_step is not None


def snapshot_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def run_episode(env: OffloadingEnv, policy, seed: int) -> EpisodeSummary:
    obs = env.reset(seed)
    energy, violations, reward = 0.0, 0, 0.0
    while not env.done:
        draws = env.draw_channel()
        out = env.step(policy(env, obs, draws), draws)
        energy += out.energy
        violations += out.violations
        reward += out.reward + out.terminal_reward
        obs = env.observations()
    return EpisodeSummary(energy, env.state.t0, violations, reward)


def _latest_ckpt(agent_dir: Path) -> Path:
    best, best_ep = None, -1
    for p in agent_dir.glob("ckpt_*.bin"):
        m = re.fullmatch(r"ckpt_(\d+)\.bin", p.name)
        if m and int(m.group(1)) > best_ep:
            best, best_ep = p, int(m.group(1))
    if best is None:
        raise MissingArtifact(f"no checkpoint in {agent_dir}")
    return best


def load_run(run_dir: str | Path, cfg: ScenarioConfig):
    """Load the newest checkpoint of every agent in a run directory.

    Returns ``("mappo", AgentPool)`` or ``("dqn", [DQNAgent, ...])``.
    """
    run_dir = Path(run_dir)
    agent_dirs = sorted((d for d in run_dir.glob("agent_*") if d.is_dir()),
                        key=lambda d: int(d.name.split("_")[1]))
    if not agent_dirs:
        raise MissingArtifact(f"no agent checkpoints under {run_dir}")
    if len(agent_dirs) != cfg.env.num_ues:
        raise MissingArtifact(f"{run_dir} holds {len(agent_dirs)} agents, scenario has {cfg.env.num_ues} UEs")
    loaded = [load_checkpoint(_latest_ckpt(d)) for d in agent_dirs]
    algo = loaded[0][2].get("algo")
    if algo == "mappo":
        return algo, AgentPool([Agent(n["actor"], n["critic"], o["actor"], o["critic"]) for n, o, _ in loaded])
    if algo == "dqn":
        agents = []
        for nets, opts, _ in loaded:
            a = DQNAgent(nets["q"], cfg.dqn_lr, cfg.dqn.gamma, 1, cfg.dqn.target_sync)
            a.target = nets["target"]
            agents.append(a)
        return algo, agents
    raise MissingArtifact(f"{run_dir}: unknown algorithm {algo!r}")


def make_policy(name: str, cfg: ScenarioConfig, seed: int, learned: dict | None = None):
    learned = learned or {}
    if name in ("local", "remote"):
        return static_policy(name, cfg)
    if name == "random":
        return static_policy("random", cfg, np.random.default_rng([seed, 7]))
    if name == "exhaustive":
        return exhaustive_policy(cfg)
    if name == "mappo":
        if "mappo" not in learned:
            raise MissingArtifact("mappo policy requested without a trained run")
        return learned["mappo"].policy(ppo.ActionBounds.from_config(cfg))
    if name == "dqn":
        if "dqn" not in learned:
            raise MissingArtifact("dqn policy requested without a trained run")
        return dqn_policy(learned["dqn"], DiscreteActionGrid.from_config(cfg))
    raise ValueError(f"unknown policy {name!r}")


def _evaluate_chunk(args) -> list[dict]:
    cfg, policies, runs, jobs = args
    learned = {}
    for algo, path in runs.items():
        kind, obj = load_run(path, cfg)
        learned[kind] = obj
    env = OffloadingEnv(cfg)
    rows = []
    for seed, index in jobs:
        env_seed = snapshot_seed(seed, index)
        for name in policies:
            res = run_episode(env, make_policy(name, cfg, env_seed, learned), env_seed)
            rows.append({"policy": name, "seed": seed, "episode": index, "energy_J": res.energy_J,
                         "completion_step": -1 if res.completion_step is None else res.completion_step,
                         "violations": res.violations, "completed": int(res.completed)})
    return rows


def evaluate(cfg: ScenarioConfig, policies, seeds, snapshots: int, runs: dict | None = None,
             jobs: int = 1) -> list[dict]:
    """One row per (policy, seed, snapshot). Output order is independent of ``jobs``."""
    runs = {k: str(v) for k, v in (runs or {}).items()}
    for path in runs.values():
        load_run(path, cfg)  # fail fast on missing checkpoints
    work = [(s, j) for s in seeds for j in range(snapshots)]
    if jobs <= 1 or len(work) < 2:
        rows = _evaluate_chunk((cfg, tuple(policies), runs, work))
    else:
        chunks = [work[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_evaluate_chunk, [(cfg, tuple(policies), runs, c) for c in chunks if c]))
        rows = [r for part in parts for r in part]
    order = {p: n for n, p in enumerate(policies)}
    rows.sort(key=lambda r: (r["seed"], r["episode"], order[r["policy"]]))
    return rows


def summarize(rows: list[dict]) -> dict[str, dict]:
    out = {}
    for name in dict.fromkeys(r["policy"] for r in rows):
        energy = np.array([r["energy_J"] for r in rows if r["policy"] == name])
        done = np.array([r["completed"] for r in rows if r["policy"] == name])
        out[name] = {"mean_energy_J": float(energy.mean()), "std_energy_J": float(energy.std()),
                     "completion_rate": float(done.mean()), "n": int(energy.size)}
    return out


def check_k_values(cfg: ScenarioConfig, k_values) -> None:
    """Raise ConfigError naming the first k that the accuracy table does not cover."""
    for k in k_values:
        OffloadingEnv(cfg.replace(**{"semantics.k": int(k)}))


def sweep_k(cfg: ScenarioConfig, k_values, policies, seeds, snapshots: int, jobs: int = 1,
            runs_by_k: dict | None = None) -> list[dict]:
    check_k_values(cfg, k_values)
    rows = []
    for k in k_values:
        cfg_k = cfg.replace(**{"semantics.k": int(k)})
        runs = (runs_by_k or {}).get(k, {})
        summary = summarize(evaluate(cfg_k, policies, seeds, snapshots, runs, jobs))
        for name, s in summary.items():
            rows.append({"k": int(k), "policy": name, "mean_energy_J": s["mean_energy_J"],
                         "std_energy_J": s["std_energy_J"], "completion_rate": s["completion_rate"]})
    return rows
