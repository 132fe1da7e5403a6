"""Comparison policies: discrete-action DQN, per-step exhaustive search,
local-only, remote-only and uniformly random.

Every policy is a callable ``policy(env, obs, draws) -> JointAction``.
Only the exhaustive search looks at ``draws`` (it is the CSI-aware oracle);
the others act on local observations.
"""
from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .config import ConfigError, ScenarioConfig, dbm_to_watt
from .env import OBS_DIM, EnvState, JointAction, OffloadingEnv, attempt_physics
from .metrics import DQN_TRAIN_FIELDS, jsonl_line
from .nnet import Adam, DenseNet, NonFiniteGradientError, save_checkpoint

log = logging.getLogger(__name__)

Policy = Callable[[OffloadingEnv, list, list], JointAction]


@dataclass(frozen=True)
class DiscreteActionGrid:
    """Local options first (one per frequency level), then offload options (one per power level)."""
    freqs: np.ndarray
    powers: np.ndarray
    f_idle: float = 0.0

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "DiscreteActionGrid":
        e, b = cfg.env, cfg.baselines
        freqs = np.linspace(e.f_min_hz, e.f_max_hz, b.freq_levels)
        powers = np.array([dbm_to_watt(x) for x in np.linspace(e.p_min_dbm, e.p_max_dbm, b.power_levels)])
        # endpoints exactly on the limits so (8d)/(8e) hold for every option
        freqs[-1] = e.f_max_hz
        powers[-1] = e.p_max_w
        return cls(freqs, powers, e.f_idle_hz)

    def __len__(self):
        return len(self.freqs) + len(self.powers)

    def triple(self, index: int) -> tuple[int, float, float]:
        if not 0 <= index < len(self):
            raise IndexError(index)
        lf = len(self.freqs)
        if index < lf:
            return 0, 0.0, float(self.freqs[index])
        return 1, float(self.powers[index - lf]), self.f_idle

    def joint(self, indices) -> JointAction:
        return JointAction.of([self.triple(int(i)) for i in indices])


# --- static policies ----------------------------------------------------------

def static_policy(mode: str, cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> Policy:
    e = cfg.env
    if mode == "local":
        def choose(env, obs, draws):
            return JointAction.of([(0, 0.0, e.f_max_hz)] * len(obs))
    elif mode == "remote":
        def choose(env, obs, draws):
            return JointAction.of([(1, e.p_max_w, e.f_idle_hz)] * len(obs))
    elif mode == "random":
        if rng is None:
            raise ValueError("random policy needs an rng")

        def choose(env, obs, draws):
            triples = []
            for _ in obs:
                rho = int(rng.integers(2))
                p = float(rng.uniform(e.p_min_w, e.p_max_w))
                f = float(rng.uniform(e.f_min_hz, e.f_max_hz))
                triples.append((rho, p, e.f_idle_hz) if rho else (0, 0.0, f))
            return JointAction.of(triples)
    else:
        raise ValueError(f"unknown static policy mode {mode!r}")
    return choose


# --- exhaustive search --------------------------------------------------------

@dataclass(frozen=True)
class SearchResult:
    indices: tuple
    action: JointAction
    feasible: bool


def option_tables(cfg: ScenarioConfig, table, state: EnvState, draws, grid: DiscreteActionGrid):
    """Per-(UE, option) quantities that do not depend on the other UEs.

    Inactive UEs (empty queue) get a single zero-cost option.
    """
    I, L = state.num_ues, len(grid)
    e_lc = np.zeros((I, L))
    e_ut = np.zeros((I, L))
    runs = np.zeros((I, L), dtype=np.bool_)
    off = np.zeros((I, L), dtype=np.bool_)
    lat = np.zeros((I, L))
    viol = np.zeros((I, L), dtype=np.int64)
    for i in range(I):
        if state.queue[i] <= 0:
            continue
        for a in range(L):
            rho, p, f = grid.triple(a)
            _, eps, t_lc, t_ut, el, eu = attempt_physics(cfg, table, rho, p, f, draws[i])
            off[i, a] = rho == 1
            if el + eu > state.battery[i]:
                viol[i, a] += 1   # battery: the attempt does not run, costs nothing
                continue
            runs[i, a] = True
            e_lc[i, a], e_ut[i, a] = el, eu
            lat[i, a] = t_ut if rho == 1 else t_lc
            if rho == 1 and eps < cfg.semantics.eps_min:
                viol[i, a] += 1
    return e_lc, e_ut, runs, off, lat, viol


def exhaustive_search(cfg: ScenarioConfig, table, state: EnvState, draws,
                      grid: DiscreteActionGrid) -> SearchResult:
    """Joint grid action with the lowest step energy among those meeting every constraint.

    Ties go to the lexicographically smallest option-index tuple (UE 0 most
    significant). When nothing is feasible, the action with the fewest
    violations (then lowest energy) is returned with ``feasible=False``.
    """
    active = [i for i in range(state.num_ues) if state.queue[i] > 0]
    L = len(grid)
    combos = L ** len(active)
    if combos > cfg.baselines.max_combinations:
        raise ConfigError(f"exhaustive search over {combos} joint actions exceeds "
                          f"baselines.max_combinations={cfg.baselines.max_combinations}")
    e_lc, e_ut, runs, off, lat, viol = option_tables(cfg, table, state, draws, grid)
    indices = [0] * state.num_ues
    feasible = True
    if active:
        sel = np.array(active)
        e = cfg.env
        best, feasible = _kernels.enumerate_joint(
            np.ascontiguousarray(e_lc[sel]), np.ascontiguousarray(e_ut[sel]),
            np.ascontiguousarray(runs[sel]), np.ascontiguousarray(off[sel]),
            np.ascontiguousarray(lat[sel]), float(e.t_dl_s), np.ascontiguousarray(viol[sel]),
            float(e.sentence_flops), float(e.n_remote * e.f_remote_hz), float(e.tau_max_s))
        best = int(best)
        for pos in range(len(active) - 1, -1, -1):
            indices[active[pos]] = best % L
            best //= L
    return SearchResult(tuple(indices), grid.joint(indices), bool(feasible))


def exhaustive_policy(cfg: ScenarioConfig) -> Policy:
    grid = DiscreteActionGrid.from_config(cfg)

    def choose(env, obs, draws):
        res = exhaustive_search(cfg, env.table, env.state, draws, grid)
        if not res.feasible:
            log.debug("exhaustive search: no feasible joint action at t=%d", env.state.t)
        return res.action
    return choose


# --- DQN ----------------------------------------------------------------------

class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int):
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.capacity = capacity
        self.size = 0
        self._pos = 0

    def add(self, obs, action, reward, next_obs, done):
        j = self._pos
        self.obs[j], self.actions[j], self.rewards[j] = obs, action, reward
        self.next_obs[j], self.dones[j] = next_obs, float(done)
        self._pos = (j + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=n)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx]


def greedy_index(q: np.ndarray) -> int:
    """Argmax with ties resolved to the lowest index."""
    return int(np.argmax(q))


class DQNAgent:
    def __init__(self, q: DenseNet, lr: float, gamma: float, buffer: int, target_sync: int):
        self.q = q
        self.target = q.copy()
        self.opt = Adam(q.n_params, lr)
        self.gamma = gamma
        self.memory = ReplayBuffer(buffer, q.sizes[0])
        self.target_sync = target_sync
        self.updates = 0

    def act(self, obs, epsilon: float, rng: np.random.Generator) -> int:
        n = self.q.sizes[-1]
        if epsilon > 0 and rng.random() < epsilon:
            return int(rng.integers(n))
        return greedy_index(self.q(obs))

    def td_loss(self, obs, actions, rewards, next_obs, dones) -> tuple[float, np.ndarray]:
        """Mean squared TD(0) error on the taken actions, target net bootstrapped."""
        q, cache = self.q.forward(obs, cache=True)
        target = rewards + self.gamma * (1.0 - dones) * self.target(next_obs).max(axis=1)
        rows = np.arange(len(actions))
        diff = q[rows, actions] - target
        d_out = np.zeros_like(q)
        d_out[rows, actions] = 2.0 * diff / len(actions)
        return float(np.mean(diff ** 2)), self.q.backward(cache, d_out)

    def learn(self, batch_size: int, rng: np.random.Generator) -> float:
        loss, grad = self.td_loss(*self.memory.sample(batch_size, rng))
        self.opt.apply(self.q, grad)
        self.updates += 1
        if self.updates % self.target_sync == 0:
            self.target.params = self.q.params
        return loss


def make_dqn_agents(cfg: ScenarioConfig, seed_seq: np.random.SeedSequence) -> list[DQNAgent]:
    n_actions = len(DiscreteActionGrid.from_config(cfg))
    agents = []
    for child in seed_seq.spawn(cfg.env.num_ues):
        q = DenseNet((OBS_DIM, *cfg.dqn.hidden, n_actions), np.random.default_rng(child))
        agents.append(DQNAgent(q, cfg.dqn_lr, cfg.dqn.gamma, cfg.dqn.buffer, cfg.dqn.target_sync))
    return agents


def dqn_policy(agents: list[DQNAgent], grid: DiscreteActionGrid, epsilon: float = 0.0,
               rng: np.random.Generator | None = None) -> Policy:
    def choose(env, obs, draws):
        return grid.joint([a.act(o, epsilon, rng) for a, o in zip(agents, obs)])
    return choose


def _epsilon(cfg: ScenarioConfig, step: int) -> float:
    d = cfg.dqn
    frac = min(step / max(d.eps_decay_steps, 1), 1.0)
    return d.eps_start + frac * (d.eps_end - d.eps_start)


def save_dqn(agents: list[DQNAgent], run_dir: Path, episode: int, suffix: str = "") -> None:
    for i, a in enumerate(agents):
        d = run_dir / f"agent_{i}"
        d.mkdir(parents=True, exist_ok=True)
        save_checkpoint(d / f"ckpt_{episode}{suffix}.bin", {"q": a.q, "target": a.target}, {"q": a.opt},
                        meta={"algo": "dqn", "agent": i, "episode": episode, "updates": a.updates})


def train_dqn(cfg: ScenarioConfig, seed: int, run_dir: str | Path | None = None) -> tuple[list[dict], list[DQNAgent]]:
    """Independent per-UE DQN on the discrete grid, global reward, epsilon-greedy exploration."""
    from .marl import TrainingDiverged

    init_seq, env_seq, act_seq = np.random.SeedSequence(seed).spawn(3)
    agents = make_dqn_agents(cfg, init_seq)
    grid = DiscreteActionGrid.from_config(cfg)
    env_rng = np.random.default_rng(env_seq)
    rng = np.random.default_rng(act_seq)
    env = OffloadingEnv(cfg)
    run_dir = Path(run_dir) if run_dir is not None else None
    rows: list[dict] = []
    fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        fh = open(run_dir / "metrics.jsonl", "w")
    total_steps = 0
    try:
        for episode in range(cfg.dqn.episodes):
            obs = env.reset(int(env_rng.integers(2 ** 63 - 1)))
            ep_return, energy, losses = 0.0, 0.0, []
            while not env.done:
                eps = _epsilon(cfg, total_steps)
                acts = [a.act(o, eps, rng) for a, o in zip(agents, obs)]
                out = env.step(grid.joint(acts))
                r = out.reward + out.terminal_reward
                nxt = env.observations()
                for a, o, act, o2 in zip(agents, obs, acts, nxt):
                    a.memory.add(o, act, r, o2, out.done)
                    if a.memory.size >= max(cfg.dqn.warmup, cfg.dqn.batch):
                        try:
                            losses.append(a.learn(cfg.dqn.batch, rng))
                        except NonFiniteGradientError as exc:
                            if run_dir is not None:
                                save_dqn(agents, run_dir, episode, suffix="_diverged")
                            raise TrainingDiverged(f"episode {episode}: {exc}") from exc
                obs = nxt
                ep_return += r
                energy += out.energy
                total_steps += 1
            row = {"episode": episode, "mean_reward": ep_return,
                   "td_loss": float(np.mean(losses)) if losses else 0.0,
                   "epsilon": _epsilon(cfg, total_steps), "energy_J": energy,
                   "completion_step": -1 if env.state.t0 is None else int(env.state.t0)}
            rows.append(row)
            if fh is not None:
                fh.write(jsonl_line(row, DQN_TRAIN_FIELDS))
        if run_dir is not None and cfg.dqn.episodes > 0:
            save_dqn(agents, run_dir, cfg.dqn.episodes)
    finally:
        if fh is not None:
            fh.close()
    return rows, agents
