"""Single-agent PPO pieces for the hybrid offload/power/frequency action.

The actor network emits five numbers per observation: a Bernoulli logit
for the offload flag and (mean, log-std) pairs for two Gaussians whose
samples are squashed through ``tanh`` onto the power and frequency ranges.
The joint log-probability is the sum of the three parts.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .nnet import Adam, DenseNet

log = logging.getLogger(__name__)

HEAD_DIM = 5
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_GAUSS_ENT_CONST = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class ActionBounds:
    p_min: float
    p_max: float
    f_min: float
    f_max: float
    f_idle: float = 0.0

    @classmethod
    def from_config(cls, cfg) -> "ActionBounds":
        e = cfg.env
        return cls(e.p_min_w, e.p_max_w, e.f_min_hz, e.f_max_hz, e.f_idle_hz)


@dataclass(frozen=True)
class HybridPolicyOutput:
    logit: np.ndarray
    mu_p: np.ndarray
    log_std_p: np.ndarray
    mu_f: np.ndarray
    log_std_f: np.ndarray
    # where the raw log-std fell inside the clamp (gradient passes through)
    pass_p: np.ndarray
    pass_f: np.ndarray

    @classmethod
    def from_raw(cls, raw) -> "HybridPolicyOutput":
        raw = np.asarray(raw, dtype=np.float64)
        ls_p, ls_f = raw[..., 2], raw[..., 4]
        return cls(raw[..., 0], raw[..., 1], np.clip(ls_p, LOG_STD_MIN, LOG_STD_MAX),
                   raw[..., 3], np.clip(ls_f, LOG_STD_MIN, LOG_STD_MAX),
                   (ls_p >= LOG_STD_MIN) & (ls_p <= LOG_STD_MAX),
                   (ls_f >= LOG_STD_MIN) & (ls_f <= LOG_STD_MAX))


@dataclass(frozen=True)
class HybridAction:
    rho: int
    u_p: float  # pre-squash samples; kept so densities can be re-evaluated exactly
    u_f: float
    p: float    # environment-facing values after squash and forcing
    f: float


def squash(u, lo, hi):
    return lo + (hi - lo) * 0.5 * (np.tanh(u) + 1.0)


def _log_squash_jacobian(u, lo, hi):
    # log d/du squash(u) = log((hi-lo)/2) + log(1 - tanh(u)^2), written stably
    u = np.asarray(u, dtype=np.float64)
    span = max(hi - lo, 1e-300)
    return math.log(span / 2.0) + 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _sigmoid(z):
    return np.exp(_log_sigmoid(z))


def _gauss_logpdf(u, mu, log_std):
    z = (u - mu) * np.exp(-log_std)
    return -0.5 * z * z - log_std - _HALF_LOG_2PI


def log_prob(head: HybridPolicyOutput, rho, u_p, u_f, bounds: ActionBounds):
    rho = np.asarray(rho, dtype=np.float64)
    lp_rho = rho * _log_sigmoid(head.logit) + (1.0 - rho) * _log_sigmoid(-head.logit)
    lp_p = _gauss_logpdf(u_p, head.mu_p, head.log_std_p) - _log_squash_jacobian(u_p, bounds.p_min, bounds.p_max)
    lp_f = _gauss_logpdf(u_f, head.mu_f, head.log_std_f) - _log_squash_jacobian(u_f, bounds.f_min, bounds.f_max)
    return lp_rho + lp_p + lp_f


def entropy(head: HybridPolicyOutput):
    """Bernoulli entropy plus the two pre-squash Gaussian entropies."""
    z = head.logit
    s = _sigmoid(z)
    h_rho = np.logaddexp(0.0, z) - z * s
    return h_rho + head.log_std_p + head.log_std_f + 2.0 * _GAUSS_ENT_CONST


def _to_env(rho: int, u_p: float, u_f: float, bounds: ActionBounds) -> tuple[float, float]:
    if rho == 1:
        return float(squash(u_p, bounds.p_min, bounds.p_max)), bounds.f_idle
    return 0.0, float(squash(u_f, bounds.f_min, bounds.f_max))


def act(head: HybridPolicyOutput, bounds: ActionBounds, rng: np.random.Generator) -> tuple[HybridAction, float]:
    """Sample one action. With ``rho = 1`` the frequency is overridden to idle,
    but the sampled frequency still contributes to the log-probability."""
    rho = int(rng.random() < _sigmoid(float(head.logit)))
    u_p = float(head.mu_p + math.exp(float(head.log_std_p)) * rng.standard_normal())
    u_f = float(head.mu_f + math.exp(float(head.log_std_f)) * rng.standard_normal())
    p, f = _to_env(rho, u_p, u_f, bounds)
    lp = float(log_prob(head, rho, u_p, u_f, bounds))
    return HybridAction(rho, u_p, u_f, p, f), lp


def greedy(head: HybridPolicyOutput, bounds: ActionBounds) -> HybridAction:
    rho = int(float(head.logit) >= 0.0)
    u_p, u_f = float(head.mu_p), float(head.mu_f)
    p, f = _to_env(rho, u_p, u_f, bounds)
    return HybridAction(rho, u_p, u_f, p, f)


# --- advantages --------------------------------------------------------------

@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 0.95
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            # lam = 0 is allowed as the one-step TD limit
            raise ValueError("lambda must lie in [0, 1]")


@dataclass
class Trajectory:
    obs: np.ndarray
    rho: np.ndarray
    u_p: np.ndarray
    u_f: np.ndarray
    logprob: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_value: float = 0.0

    def __post_init__(self):
        n = len(self.rewards)
        for name in ("obs", "rho", "u_p", "u_f", "logprob", "values", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory field {name} has inconsistent length")

    def __len__(self):
        return len(self.rewards)


def gae_advantages(traj: Trajectory, cfg: GaeConfig) -> np.ndarray:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    return _kernels.gae(np.asarray(traj.rewards, dtype=np.float64), np.asarray(traj.values, dtype=np.float64),
                        np.asarray(traj.dones, dtype=np.float64), float(traj.last_value),
                        float(cfg.gamma), float(cfg.lam))


# --- losses ------------------------------------------------------------------

def clip_g(epsilon: float, A):
    """Clipped advantage bound: (1+eps)A for A >= 0, (1-eps)A otherwise."""
    A = np.asarray(A, dtype=np.float64)
    out = np.where(A >= 0, (1.0 + epsilon) * A, (1.0 - epsilon) * A)
    return float(out) if out.ndim == 0 else out


def clipped_surrogate(ratio, adv, epsilon: float):
    """Per-sample ``min(ratio*A, g(eps, A))``, its derivative in ``ratio`` and the clip mask."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    unclipped = ratio * adv
    bound = clip_g(epsilon, adv)
    clipped = unclipped > bound
    obj = np.where(clipped, bound, unclipped)
    d_ratio = np.where(clipped, 0.0, adv)
    return obj, d_ratio, clipped


@dataclass
class Batch:
    obs: np.ndarray
    rho: np.ndarray
    u_p: np.ndarray
    u_f: np.ndarray
    old_logprob: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.obs)

    def take(self, idx) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in
                       ("obs", "rho", "u_p", "u_f", "old_logprob", "advantages", "returns")))

    @classmethod
    def concat(cls, batches) -> "Batch":
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in
                     ("obs", "rho", "u_p", "u_f", "old_logprob", "advantages", "returns")))


def batch_from_trajectory(traj: Trajectory, cfg: GaeConfig) -> Batch:
    adv = gae_advantages(traj, cfg)
    return Batch(np.asarray(traj.obs), np.asarray(traj.rho, dtype=np.float64), np.asarray(traj.u_p),
                 np.asarray(traj.u_f), np.asarray(traj.logprob), adv, adv + np.asarray(traj.values))


@dataclass
class ActorLossResult:
    loss: float           # negated objective, for minimisation
    objective: float      # mean clipped surrogate
    entropy: float
    grad: np.ndarray
    clip_fraction: float
    mean_ratio: float
    excluded: int


def clipped_actor_loss(batch: Batch, actor: DenseNet, bounds: ActionBounds, epsilon: float,
                       c2: float = 0.0) -> ActorLossResult:
    """Negated ``mean(min(ratio*A, g(eps, A))) + c2 * mean(entropy)`` and its gradient."""
    raw, cache = actor.forward(batch.obs, cache=True)
    head = HybridPolicyOutput.from_raw(raw)
    new_lp = log_prob(head, batch.rho, batch.u_p, batch.u_f, bounds)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(new_lp - batch.old_logprob)
    valid = np.isfinite(ratio)
    excluded = int(np.count_nonzero(~valid))
    if excluded:
        log.warning("excluded %d samples with non-finite probability ratio", excluded)
    n = max(int(np.count_nonzero(valid)), 1)
    ratio_v = np.where(valid, ratio, 1.0)
    adv = np.where(valid, batch.advantages, 0.0)
    obj, d_ratio, clipped = clipped_surrogate(ratio_v, adv, epsilon)
    ent = entropy(head)

    # d(objective)/d(new log-prob) per sample; zero for excluded samples
    g_lp = np.where(valid, d_ratio * ratio_v, 0.0) / n
    g_ent = np.where(valid, c2, 0.0) / n

    s = _sigmoid(head.logit)
    sd_p, sd_f = np.exp(head.log_std_p), np.exp(head.log_std_f)
    z_p = (batch.u_p - head.mu_p) / sd_p
    z_f = (batch.u_f - head.mu_f) / sd_f
    d_raw = np.empty_like(raw)
    d_raw[:, 0] = g_lp * (batch.rho - s) + g_ent * (-head.logit * s * (1.0 - s))
    d_raw[:, 1] = g_lp * z_p / sd_p
    d_raw[:, 2] = (g_lp * (z_p * z_p - 1.0) + g_ent) * head.pass_p
    d_raw[:, 3] = g_lp * z_f / sd_f
    d_raw[:, 4] = (g_lp * (z_f * z_f - 1.0) + g_ent) * head.pass_f
    # descend on the negated objective
    grad = -actor.backward(cache, d_raw)

    objective = float(np.sum(np.where(valid, obj, 0.0)) / n)
    mean_ent = float(np.sum(np.where(valid, ent, 0.0)) / n)
    return ActorLossResult(
        loss=-(objective + c2 * mean_ent), objective=objective, entropy=mean_ent, grad=grad,
        clip_fraction=float(np.count_nonzero(clipped & valid) / n),
        mean_ratio=float(np.sum(ratio_v * valid) / n), excluded=excluded)


def critic_loss(batch: Batch, critic: DenseNet) -> tuple[float, np.ndarray]:
    """Mean squared gap between value estimates and return targets, with gradient."""
    v, cache = critic.forward(batch.obs, cache=True)
    diff = v[:, 0] - batch.returns
    loss = float(np.mean(diff ** 2))
    d_out = (2.0 / len(diff)) * diff[:, None]
    return loss, critic.backward(cache, d_out)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def combined_update(batch: Batch, actor: DenseNet, critic: DenseNet, actor_opt: Adam, critic_opt: Adam,
                    bounds: ActionBounds, *, c1: float, c2: float, epsilon: float, epochs: int,
                    minibatch: int, rng: np.random.Generator, normalize: bool = True) -> dict:
    """K epochs of minibatch steps on clip objective - c1 * critic loss + c2 * entropy.

    Actor and critic are separate networks, so the combined objective splits
    into one Adam step per network per minibatch.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    if normalize:
        batch = Batch(batch.obs, batch.rho, batch.u_p, batch.u_f, batch.old_logprob,
                      normalize_advantages(batch.advantages), batch.returns)
    sums = {"actor_loss": 0.0, "critic_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0,
            "mean_ratio": 0.0}
    excluded = 0
    count = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch):
            mb = batch.take(order[start:start + minibatch])
            a = clipped_actor_loss(mb, actor, bounds, epsilon, c2)
            c_loss, c_grad = critic_loss(mb, critic)
            actor_opt.apply(actor, a.grad)
            critic_opt.apply(critic, c1 * c_grad)
            w = len(mb)
            sums["actor_loss"] += w * a.loss
            sums["critic_loss"] += w * c_loss
            sums["entropy"] += w * a.entropy
            sums["clip_fraction"] += w * a.clip_fraction
            sums["mean_ratio"] += w * a.mean_ratio
            excluded += a.excluded
            count += w
    stats = {k: v / count for k, v in sums.items()}
    stats["excluded"] = excluded
    return stats
