"""Federated multi-agent PPO: one agent per UE, shared global reward,
periodic uniform parameter averaging across agents."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import ppo
from .config import ScenarioConfig
from .metrics import TRAIN_FIELDS, jsonl_line
from .env import OBS_DIM, JointAction, OffloadingEnv
from .nnet import Adam, DenseNet, NonFiniteGradientError, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Agent:
    actor: DenseNet
    critic: DenseNet
    actor_opt: Adam
    critic_opt: Adam
    memory: list = field(default_factory=list)  # per-episode on-policy buffer

    def head(self, obs) -> ppo.HybridPolicyOutput:
        return ppo.HybridPolicyOutput.from_raw(self.actor(obs))

    def value(self, obs) -> float:
        return float(self.critic(obs)[0])


@dataclass(frozen=True)
class FedSchedule:
    period: int = 100
    average_critic: bool = True
    reset_optimizer: bool = False

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("averaging period must be >= 1")


class AgentPool:
    def __init__(self, agents: list[Agent]):
        self.agents = agents

    def __len__(self):
        return len(self.agents)

    def __getitem__(self, i) -> Agent:
        return self.agents[i]

    @classmethod
    def create(cls, cfg: ScenarioConfig, seed_seq: np.random.SeedSequence) -> "AgentPool":
        hidden = cfg.ppo.hidden
        agents = []
        for child in seed_seq.spawn(cfg.env.num_ues):
            rng = np.random.default_rng(child)
            actor = DenseNet((OBS_DIM, *hidden, ppo.HEAD_DIM), rng, out_scale=0.01)
            critic = DenseNet((OBS_DIM, *hidden, 1), rng)
            agents.append(Agent(actor, critic, Adam(actor.n_params, cfg.ppo.lr),
                                Adam(critic.n_params, cfg.ppo.lr)))
        return cls(agents)

    def policy(self, bounds: ppo.ActionBounds) -> Callable:
        """Deterministic evaluation policy (mean action, offload iff p(offload) >= 1/2)."""
        def choose(env: OffloadingEnv, obs, draws) -> JointAction:
            acts = [ppo.greedy(a.head(o), bounds) for a, o in zip(self.agents, obs)]
            return JointAction.of([(x.rho, x.p, x.f) for x in acts])
        return choose


@dataclass
class EpisodeResult:
    trajectories: list
    episode_return: float
    energy: float
    completion_step: int | None
    steps: int
    entropy: float


def collect_episode(pool: AgentPool, env: OffloadingEnv, env_seed: int, rng: np.random.Generator,
                    bounds: ppo.ActionBounds) -> EpisodeResult:
    """Roll out one episode; every agent stores the same global reward stream."""
    obs = env.reset(env_seed)
    I = len(pool)
    rec = {k: [[] for _ in range(I)] for k in ("obs", "rho", "u_p", "u_f", "logprob", "values")}
    rewards: list[float] = []
    dones: list[float] = []
    energy = 0.0
    ent_sum, ent_n = 0.0, 0
    while not env.done:
        triples = []
        for i, agent in enumerate(pool.agents):
            head = agent.head(obs[i])
            a, lp = ppo.act(head, bounds, rng)
            ent_sum += float(ppo.entropy(head))
            ent_n += 1
            triples.append((a.rho, a.p, a.f))
            for k, v in (("obs", obs[i]), ("rho", a.rho), ("u_p", a.u_p), ("u_f", a.u_f),
                         ("logprob", lp), ("values", agent.value(obs[i]))):
                rec[k][i].append(v)
        out = env.step(JointAction.of(triples))
        energy += out.energy
        # terminal bonus/penalty folded into the last reward of the episode
        rewards.append(out.reward + out.terminal_reward)
        dones.append(float(out.done))
        obs = env.observations()
    trajs = []
    for i in range(I):
        trajs.append(ppo.Trajectory(
            obs=np.array(rec["obs"][i]).reshape(-1, OBS_DIM), rho=np.array(rec["rho"][i], dtype=np.float64),
            u_p=np.array(rec["u_p"][i]), u_f=np.array(rec["u_f"][i]),
            logprob=np.array(rec["logprob"][i]), rewards=np.array(rewards),
            values=np.array(rec["values"][i]), dones=np.array(dones), last_value=0.0))
    return EpisodeResult(trajs, float(np.sum(rewards)), energy, env.state.t0, len(rewards),
                         ent_sum / max(ent_n, 1))


def federated_average(pool: AgentPool, schedule: FedSchedule = FedSchedule()) -> AgentPool:
    """Replace every agent's parameters by the uniform element-wise mean."""
    nets = [("actor", "actor_opt")] + ([("critic", "critic_opt")] if schedule.average_critic else [])
    for net_name, opt_name in nets:
        stack = [getattr(a, net_name).params for a in pool.agents]
        if len({p.shape for p in stack}) != 1:
            raise ValueError(f"{net_name} parameter vectors differ in shape")
        mean = np.mean(np.stack(stack), axis=0)
        for a in pool.agents:
            getattr(a, net_name).params = mean
            if schedule.reset_optimizer:
                getattr(a, opt_name).reset()
    return pool


@dataclass
class TrainingRecord:
    rows: list = field(default_factory=list)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r["mean_reward"] for r in self.rows])

    @property
    def entropies(self) -> np.ndarray:
        return np.array([r["entropy"] for r in self.rows])


def save_pool(pool: AgentPool, run_dir: Path, episode: int, suffix: str = "") -> None:
    for i, a in enumerate(pool.agents):
        d = run_dir / f"agent_{i}"
        d.mkdir(parents=True, exist_ok=True)
        save_checkpoint(d / f"ckpt_{episode}{suffix}.bin", {"actor": a.actor, "critic": a.critic},
                        {"actor": a.actor_opt, "critic": a.critic_opt},
                        meta={"algo": "mappo", "agent": i, "episode": episode})


def train(cfg: ScenarioConfig, seed: int, run_dir: str | Path | None = None,
          on_episode: Callable[[dict], None] | None = None) -> tuple[TrainingRecord, AgentPool]:
    """Collect, update every agent on its own episode, average every ``fed_period`` episodes.

    Seed fan-out: ``SeedSequence(seed).spawn(3)`` gives (agent init, episode
    snapshot seeds, action sampling + minibatch shuffling).
    """
    init_seq, env_seq, act_seq = np.random.SeedSequence(seed).spawn(3)
    pool = AgentPool.create(cfg, init_seq)
    env_rng = np.random.default_rng(env_seq)
    rng = np.random.default_rng(act_seq)
    env = OffloadingEnv(cfg)
    bounds = ppo.ActionBounds.from_config(cfg)
    gae_cfg = ppo.GaeConfig(cfg.ppo.gamma, cfg.ppo.lam)
    schedule = FedSchedule(cfg.ppo.fed_period, cfg.ppo.average_critic, cfg.ppo.reset_optimizer)
    run_dir = Path(run_dir) if run_dir is not None else None
    record = TrainingRecord()
    metrics_fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(run_dir / "metrics.jsonl", "w")
    try:
        for episode in range(cfg.ppo.episodes):
            env_seed = int(env_rng.integers(2 ** 63 - 1))
            ep = collect_episode(pool, env, env_seed, rng, bounds)
            stats = []
            try:
                for agent, traj in zip(pool.agents, ep.trajectories):
                    batch = ppo.batch_from_trajectory(traj, gae_cfg)
                    stats.append(ppo.combined_update(
                        batch, agent.actor, agent.critic, agent.actor_opt, agent.critic_opt, bounds,
                        c1=cfg.ppo.c1, c2=cfg.ppo.c2, epsilon=cfg.ppo.clip, epochs=cfg.ppo.epochs,
                        minibatch=cfg.ppo.minibatch, rng=rng, normalize=cfg.ppo.normalize_adv))
            except NonFiniteGradientError as exc:
                if run_dir is not None:
                    save_pool(pool, run_dir, episode, suffix="_diverged")
                raise TrainingDiverged(f"episode {episode}: {exc}") from exc
            averaged = (episode + 1) % schedule.period == 0
            if averaged:
                federated_average(pool, schedule)
            row = {
                "episode": episode,
                "mean_reward": ep.episode_return,
                "actor_loss": float(np.mean([s["actor_loss"] for s in stats])),
                "critic_loss": float(np.mean([s["critic_loss"] for s in stats])),
                "entropy": ep.entropy,
                "clip_fraction": float(np.mean([s["clip_fraction"] for s in stats])),
                "energy_J": ep.energy,
                "completion_step": -1 if ep.completion_step is None else int(ep.completion_step),
            }
            if not all(np.isfinite(v) for v in (row["actor_loss"], row["critic_loss"])):
                if run_dir is not None:
                    save_pool(pool, run_dir, episode, suffix="_diverged")
                raise TrainingDiverged(f"episode {episode}: non-finite loss")
            record.rows.append(row)
            if metrics_fh is not None:
                metrics_fh.write(jsonl_line(row, TRAIN_FIELDS))
                if averaged:
                    save_pool(pool, run_dir, episode + 1)
            if on_episode is not None:
                on_episode(row)
        if run_dir is not None and cfg.ppo.episodes > 0:
            save_pool(pool, run_dir, cfg.ppo.episodes)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return record, pool
