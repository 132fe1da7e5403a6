"""Multi-UE offloading environment.

One environment step is one sentence attempt per UE. Each UE either
decodes the sentence on its own GPU (``rho = 0``) or uploads its semantic
representation to the edge server (``rho = 1``), which shares its GPU among
all UEs offloading in that step.

Energy is charged when the UE actually runs the attempt. Attempts rejected
by the hardware (malformed action, power or frequency limits, empty
battery) consume nothing; attempts that run but miss the accuracy or
latency target are charged and do not shorten the queue.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import channel as ch
from .config import ScenarioConfig
from .semantics import AccuracyTable, SemanticSourceStats, load_table, similarity

CONSTRAINTS = ("8b", "8c", "8d", "8e", "8f", "8g")
OBS_DIM = 6


@dataclass(frozen=True)
class TaskSpec:
    queue_len: int
    flops_per_sentence: float
    max_latency: float

    def __post_init__(self):
        if self.queue_len < 0 or self.flops_per_sentence <= 0 or self.max_latency <= 0:
            raise ValueError("invalid task spec")


@dataclass(frozen=True)
class UEState:
    position: tuple
    battery_remaining: float
    task: TaskSpec
    distance_to_es: float


@dataclass(frozen=True)
class JointAction:
    """Per-UE offload flag, transmit power (W) and GPU frequency (Hz)."""
    rho: np.ndarray
    p: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        p = np.asarray(self.p, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if not rho.shape == p.shape == f.shape or rho.ndim != 1:
            raise ValueError("rho, p and f must be 1-d arrays of equal length")
        for name, arr in (("rho", rho), ("p", p), ("f", f)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def of(cls, triples: Sequence[tuple]) -> "JointAction":
        rho, p, f = zip(*triples)
        return cls(np.array(rho), np.array(p), np.array(f))

    def __len__(self):
        return len(self.rho)


@dataclass(frozen=True)
class EnvState:
    positions: np.ndarray       # (I, 2) metres
    distances: np.ndarray       # (I,)
    gains: np.ndarray           # (I,) large-scale linear gain
    battery: np.ndarray         # (I,) J remaining
    queue: np.ndarray           # (I,) sentences remaining
    t: int = 0
    done: bool = False
    t0: int | None = None

    @property
    def num_ues(self) -> int:
        return len(self.queue)

    def ue(self, i: int, cfg: ScenarioConfig) -> UEState:
        task = TaskSpec(int(self.queue[i]), cfg.env.sentence_flops, cfg.env.tau_max_s)
        return UEState(tuple(self.positions[i]), float(self.battery[i]), task, float(self.distances[i]))


@dataclass(frozen=True)
class StepOutcome:
    t_lc: np.ndarray
    t_ut: np.ndarray
    t_rc: np.ndarray
    t_dl: np.ndarray
    t_total: np.ndarray
    e_lc: np.ndarray
    e_ut: np.ndarray
    e_rc: np.ndarray
    snr: np.ndarray
    eps: np.ndarray
    required_energy: np.ndarray
    constraint_ok: dict
    malformed: np.ndarray
    active: np.ndarray
    sentence_completed: np.ndarray
    num_offloaders: int
    energy: float
    reward: float
    terminal_reward: float = 0.0
    done: bool = False

    @property
    def ue_energy(self) -> np.ndarray:
        return self.e_lc + self.e_ut

    @property
    def violations(self) -> int:
        return int(sum(np.count_nonzero(~ok & self.active) for ok in self.constraint_ok.values()))


# --- single-sentence physics -------------------------------------------------

def local_latency(flops: float, n_local: float, f: float) -> float:
    if f <= 0:
        raise ValueError("GPU frequency must be positive")
    return flops / (n_local * f)


def local_energy(t_lc: float, f: float, alpha: float) -> float:
    return alpha * t_lc * f ** 3


def upload_latency(rho: int, stats: SemanticSourceStats, W: float, eps: float) -> float:
    """Time to push one sentence's semantic symbols; ``inf`` when nothing gets through."""
    if rho == 0:
        return 0.0
    if eps <= 0:
        return math.inf
    return stats.avg_words_per_sentence * stats.symbols_per_word / (W * eps)


def upload_energy(p: float, t_ut: float) -> float:
    return p * t_ut if t_ut > 0 else 0.0


def remote_latency(flops: float, n_remote: float, f_remote: float, num_offloaders: int) -> float:
    if num_offloaders < 1:
        raise ValueError("remote_latency needs at least one offloading UE")
    return flops * num_offloaders / (n_remote * f_remote)


def remote_energy(t_rc: float, f_remote: float, num_offloaders: int, beta: float) -> float:
    return beta * t_rc * (f_remote / num_offloaders) ** 3


def terminal_reward(t0: int | None, T: int, queues_at_T, xi_terminal: float) -> float:
    """End-of-episode bonus for early completion, or penalty per unfinished sentence."""
    queues = np.asarray(queues_at_T)
    if t0 is not None and t0 <= T:
        return xi_terminal * len(queues) * (T - t0)
    return -xi_terminal * float(np.sum(queues))


def attempt_physics(cfg: ScenarioConfig, table: AccuracyTable, rho: int, p: float, f: float,
                    draw: ch.ChannelDraw) -> tuple[float, float, float, float, float, float]:
    """Per-UE quantities that do not depend on the other UEs' choices.

    Returns ``(snr, eps, t_lc, t_ut, e_lc, e_ut)`` for an action that has
    already had its forced components applied.
    """
    e = cfg.env
    if rho == 1:
        gamma = ch.snr(1, p, draw)
        eps = similarity(table, cfg.semantics.k, gamma)
        t_ut = upload_latency(1, SemanticSourceStats.from_config(cfg.semantics), cfg.channel.subband_hz, eps)
        return gamma, eps, 0.0, t_ut, 0.0, upload_energy(p, t_ut)
    t_lc = local_latency(e.sentence_flops, e.n_local, f)
    return 0.0, 0.0, t_lc, 0.0, local_energy(t_lc, f, e.alpha), 0.0


def total_energy(e_lc, e_ut) -> float:
    # fixed left-to-right order; the exhaustive-search kernel reproduces it bit for bit
    total = 0.0
    for a, b in zip(np.asarray(e_lc).tolist(), np.asarray(e_ut).tolist()):
        total += a + b
    return total


# --- episode dynamics --------------------------------------------------------

def place_ues(cfg: ScenarioConfig, rng: np.random.Generator) -> EnvState:
    I = cfg.env.num_ues
    pos = rng.uniform(0.0, cfg.env.area_m, size=(I, 2))
    es = np.full(2, cfg.env.area_m / 2.0)
    dist = np.maximum(np.linalg.norm(pos - es, axis=1), cfg.channel.min_distance_m)
    gains = np.array([ch.pathloss_gain(d, cfg.channel.carrier_hz, cfg.channel) for d in dist])
    queue = np.full(I, cfg.env.queue_len, dtype=np.int64)
    state = EnvState(pos, dist, gains, np.full(I, cfg.env.battery_j), queue)
    if cfg.env.queue_len == 0:
        state = replace(state, done=True, t0=0)
    return state


def step(cfg: ScenarioConfig, table: AccuracyTable, state: EnvState, actions: JointAction,
         draws: Sequence[ch.ChannelDraw]) -> tuple[StepOutcome, EnvState]:
    """Advance one step. Pure: ``state`` is left untouched."""
    if state.done:
        raise RuntimeError("episode already terminated; call reset()")
    I = state.num_ues
    if len(actions) != I or len(draws) != I:
        raise ValueError(f"expected {I} actions and draws")
    e = cfg.env
    flops = e.sentence_flops
    active = state.queue > 0

    rho_raw, p_raw, f_raw = actions.rho, actions.p, actions.f
    ok_c = np.isin(rho_raw, (0.0, 1.0))
    rho = np.where(ok_c, rho_raw, 0.0).astype(np.int64)
    off = rho == 1
    malformed = ~ok_c | ~np.isfinite(p_raw) | ~np.isfinite(f_raw)
    malformed |= off & (p_raw < 0)
    malformed |= ~off & (f_raw < e.f_min_hz)
    ok_d = ~(off & (p_raw > e.p_max_w))
    ok_e = ~(~off & (f_raw > e.f_max_hz))
    # forced components: no GPU when offloading, no radio when local
    p = np.where(off, p_raw, 0.0)
    f = np.where(off, e.f_idle_hz, f_raw)
    hw_ok = active & ok_c & ok_d & ok_e & ~malformed

    snr = np.zeros(I)
    eps = np.zeros(I)
    t_lc = np.zeros(I)
    t_ut = np.zeros(I)
    e_lc = np.zeros(I)
    e_ut = np.zeros(I)
    for i in range(I):
        if hw_ok[i]:
            snr[i], eps[i], t_lc[i], t_ut[i], e_lc[i], e_ut[i] = attempt_physics(
                cfg, table, int(rho[i]), float(p[i]), float(f[i]), draws[i])
    required = e_lc + e_ut
    ok_g = ~(hw_ok & (required > state.battery))
    runs = hw_ok & ok_g
    e_lc = np.where(runs, e_lc, 0.0)
    e_ut = np.where(runs, e_ut, 0.0)

    n_off = int(np.count_nonzero(runs & off))
    t_rc = np.zeros(I)
    e_rc = np.zeros(I)
    t_dl = np.zeros(I)
    if n_off:
        t_rc_shared = remote_latency(flops, e.n_remote, e.f_remote_hz, n_off)
        e_rc_shared = remote_energy(t_rc_shared, e.f_remote_hz, n_off, e.beta)
        sel = runs & off
        t_rc[sel] = t_rc_shared
        e_rc[sel] = e_rc_shared
        t_dl[sel] = e.t_dl_s
    rho_f = np.where(runs, rho, 0).astype(float)
    with np.errstate(invalid="ignore"):
        t_total = np.where(rho_f == 1, t_ut + t_rc + t_dl, 0.0) + np.where(rho_f == 0, t_lc, 0.0)

    ok_b = ~(runs & off & (eps < cfg.semantics.eps_min))
    ok_f = ~(runs & (t_total > e.tau_max_s))
    constraint_ok = {"8b": ok_b, "8c": ok_c | ~active, "8d": ok_d | ~active, "8e": ok_e | ~active,
                     "8f": ok_f, "8g": ok_g}
    for v in constraint_ok.values():
        v.setflags(write=False)
    completed = runs & ok_b & ok_f

    energy = total_energy(e_lc, e_ut)
    reward = e.xi_step - e.energy_reward_scale * energy
    queue = state.queue - completed.astype(np.int64)
    battery = np.maximum(state.battery - (e_lc + e_ut), 0.0)
    t = state.t + 1
    done, t0, r_T = False, None, 0.0
    if not np.any(queue > 0):
        done, t0 = True, t
    elif t >= e.max_steps:
        done = True
    if done:
        r_T = terminal_reward(t0, e.max_steps, queue, e.xi_terminal)
    outcome = StepOutcome(t_lc=t_lc, t_ut=t_ut, t_rc=t_rc, t_dl=t_dl, t_total=t_total,
                          e_lc=e_lc, e_ut=e_ut, e_rc=e_rc, snr=snr, eps=eps,
                          required_energy=required, constraint_ok=constraint_ok,
                          malformed=malformed & active, active=active,
                          sentence_completed=completed, num_offloaders=n_off,
                          energy=energy, reward=reward, terminal_reward=r_T, done=done)
    nxt = replace(state, battery=battery, queue=queue, t=t, done=done, t0=t0)
    return outcome, nxt


def observe(cfg: ScenarioConfig, state: EnvState, i: int) -> np.ndarray:
    """Local observation of UE ``i``: position, battery, queue and task descriptors, normalised."""
    if not 0 <= i < state.num_ues:
        raise IndexError(i)
    e = cfg.env
    d_frac = state.queue[i] / e.queue_len if e.queue_len > 0 else 0.0
    return np.array([
        state.positions[i, 0] / e.area_m,
        state.positions[i, 1] / e.area_m,
        state.battery[i] / e.battery_j,
        d_frac,
        e.sentence_flops / e.l_ref_flop,
        e.tau_max_s / e.tau_ref_s,
    ])


class OffloadingEnv:
    """Stateful episode wrapper around :func:`step` owning its RNG streams.

    ``reset(seed)`` fixes one snapshot: UE placement and the whole per-step
    fading sequence. Fading is drawn for every UE every step regardless of
    the actions, so different policies see identical channels on the same
    snapshot.
    """

    def __init__(self, cfg: ScenarioConfig, table: AccuracyTable | None = None):
        self.cfg = cfg
        self.table = table if table is not None else load_table(cfg.semantics.table_path)
        self.table.row(cfg.semantics.k)  # fail early on a k missing from the table
        self.state: EnvState | None = None
        self._fading_rng: np.random.Generator | None = None
        self.seed: int | None = None

    def reset(self, seed: int) -> list[np.ndarray]:
        self.seed = seed
        place_seq, fading_seq = np.random.SeedSequence(seed).spawn(2)
        self.state = place_ues(self.cfg, np.random.default_rng(place_seq))
        self._fading_rng = np.random.default_rng(fading_seq)
        return self.observations()

    def observations(self) -> list[np.ndarray]:
        return [observe(self.cfg, self.state, i) for i in range(self.state.num_ues)]

    def draw_channel(self) -> list[ch.ChannelDraw]:
        h2 = ch.draw_fading(self._fading_rng, self.state.num_ues)
        return ch.make_draws(self.state.gains, h2, self.cfg.channel)

    def step(self, actions: JointAction, draws: Sequence[ch.ChannelDraw] | None = None) -> StepOutcome:
        if draws is None:
            draws = self.draw_channel()
        outcome, self.state = step(self.cfg, self.table, self.state, actions, draws)
        return outcome

    @property
    def done(self) -> bool:
        return self.state.done
