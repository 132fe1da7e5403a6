import hashlib

import numpy as np
import pytest

from semoff import marl, ppo
from semoff.env import OffloadingEnv
from semoff.nnet import Adam, DenseNet, NonFiniteGradientError


def _small(cfg, **extra):
    flat = {"env.num_ues": 2, "ppo.hidden": (8, 8), "ppo.lr": 3e-4, "ppo.minibatch": 16}
    flat.update(extra)
    return cfg.replace(**flat)


class RecordingEnv(OffloadingEnv):
    def step(self, actions, draws=None):
        out = super().step(actions, draws)
        self.outcomes.append(out)
        return out

    def reset(self, seed):
        self.outcomes = []
        return super().reset(seed)


def _pool(cfg, seed=0):
    return marl.AgentPool.create(cfg, np.random.SeedSequence(seed))


def test_global_reward_shared_and_terminal_folded(cfg, table):
    c = _small(cfg, **{"env.queue_len": 2, "env.tau_max_s": 1.0})
    env = RecordingEnv(c, table)
    pool = _pool(c)
    ep = marl.collect_episode(pool, env, 3, np.random.default_rng(0), ppo.ActionBounds.from_config(c))
    a, b = ep.trajectories
    assert a.rewards.tobytes() == b.rewards.tobytes()
    expected = [o.reward + o.terminal_reward for o in env.outcomes]
    np.testing.assert_array_equal(a.rewards, expected)
    last = env.outcomes[-1]
    if ep.completion_step is not None:
        assert last.terminal_reward == c.env.xi_terminal * 2 * (c.env.max_steps - ep.completion_step)
    assert a.dones[-1] == 1.0 and not a.dones[:-1].any()


def test_collect_episode_deterministic(cfg, table):
    c = _small(cfg)
    bounds = ppo.ActionBounds.from_config(c)
    runs = []
    for _ in range(2):
        ep = marl.collect_episode(_pool(c, 5), OffloadingEnv(c, table), 17, np.random.default_rng(1), bounds)
        runs.append(b"".join(getattr(t, f).tobytes() for t in ep.trajectories
                             for f in ("obs", "rho", "u_p", "u_f", "logprob", "rewards", "values")))
    assert runs[0] == runs[1]


def _scalar_agent(value):
    net = DenseNet((1, 1), params=np.array([value, value]))
    critic = DenseNet((1, 1), params=np.array([-value, value]))
    return marl.Agent(net, critic, Adam(2, 0.1), Adam(2, 0.1))


def test_federated_average_mean():
    pool = marl.AgentPool([_scalar_agent(1.0), _scalar_agent(3.0)])
    marl.federated_average(pool)
    for a in pool.agents:
        np.testing.assert_array_equal(a.actor.params, [2.0, 2.0])
        np.testing.assert_array_equal(a.critic.params, [-2.0, 2.0])


def test_federated_average_properties(cfg):
    c = _small(cfg, **{"env.num_ues": 3})
    pool = _pool(c, 1)
    before = np.mean([a.actor.params for a in pool.agents], axis=0)
    rev = marl.AgentPool([a for a in _pool(c, 1).agents][::-1])
    marl.federated_average(pool)
    marl.federated_average(rev)
    np.testing.assert_allclose(pool[0].actor.params, before, rtol=0, atol=1e-15)
    np.testing.assert_allclose(pool[0].actor.params, rev[0].actor.params, rtol=0, atol=1e-15)
    snapshot = pool[0].actor.params.copy()
    marl.federated_average(pool)   # consensus is a fixed point
    np.testing.assert_array_equal(pool[2].actor.params, snapshot)


def test_federated_average_options_and_errors(cfg):
    pool = marl.AgentPool([_scalar_agent(1.0), _scalar_agent(3.0)])
    pool[0].actor_opt.step(np.zeros(2), np.ones(2))
    marl.federated_average(pool, marl.FedSchedule(1, average_critic=False, reset_optimizer=True))
    np.testing.assert_array_equal(pool[0].critic.params, [-1.0, 1.0])
    assert pool[0].actor_opt.t == 0
    bad = marl.AgentPool([_scalar_agent(1.0), marl.Agent(DenseNet((1, 2)), DenseNet((1, 1)), Adam(4, 0.1),
                                                         Adam(2, 0.1))])
    with pytest.raises(ValueError):
        marl.federated_average(bad)
    with pytest.raises(ValueError):
        marl.FedSchedule(0)


def test_zero_episodes(cfg, tmp_path):
    record, pool = marl.train(_small(cfg, **{"ppo.episodes": 0}), 0, tmp_path / "run")
    assert record.rows == []
    assert not list((tmp_path / "run").rglob("*.bin"))


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_training_reproducible_and_layout(cfg, tmp_path):
    c = _small(cfg, **{"ppo.episodes": 6, "ppo.fed_period": 3})
    r1, p1 = marl.train(c, 4, tmp_path / "a")
    r2, p2 = marl.train(c, 4, tmp_path / "b")
    assert _digest(tmp_path / "a" / "metrics.jsonl") == _digest(tmp_path / "b" / "metrics.jsonl")
    assert p1[0].actor.params.tobytes() == p2[0].actor.params.tobytes()
    names = sorted(p.relative_to(tmp_path / "a").as_posix() for p in (tmp_path / "a").rglob("*.bin"))
    assert names == [f"agent_{i}/ckpt_{e}.bin" for i in (0, 1) for e in (3, 6)]
    assert len(r1.rows) == 6 and r1.rewards.shape == (6,)
    # agents agree right after an averaging point
    assert p1[0].actor.params.tobytes() == p1[1].actor.params.tobytes()


def test_divergence_writes_diagnostic_checkpoint(cfg, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteGradientError("injected")
    monkeypatch.setattr(ppo, "combined_update", boom)
    with pytest.raises(marl.TrainingDiverged):
        marl.train(_small(cfg, **{"ppo.episodes": 2}), 0, tmp_path / "run")
    assert (tmp_path / "run" / "agent_0" / "ckpt_0_diverged.bin").is_file()


def _smooth(x, w=20):
    return np.convolve(x, np.ones(w) / w, mode="valid")


@pytest.mark.slow
def test_smoke_convergence(high_load):
    c = high_load.replace(**{"env.num_ues": 2, "ppo.lr": 3e-4, "ppo.episodes": 200})
    record, _ = marl.train(c, 0)
    r = record.rewards
    assert r[-20:].mean() > r[:20].mean()
    ent = _smooth(record.entropies)
    assert ent[-1] < ent[0]
