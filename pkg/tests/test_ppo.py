import numpy as np
import pytest
from gradcheck import BOUNDS, random_batch
from oracles import gae_double_sum

from semoff import _kernels, ppo
from semoff.nnet import Adam, DenseNet


def _traj(rewards, values, last_value=0.0):
    n = len(rewards)
    dones = np.zeros(n)
    if n:
        dones[-1] = 1.0 if last_value == 0.0 else 0.0
    return ppo.Trajectory(obs=np.zeros((n, 6)), rho=np.zeros(n), u_p=np.zeros(n), u_f=np.zeros(n),
                          logprob=np.zeros(n), rewards=np.asarray(rewards, float),
                          values=np.asarray(values, float), dones=dones, last_value=last_value)


# --- GAE -----------------------------------------------------------------------

def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=12), rng.normal(size=12)
    adv = ppo.gae_advantages(_traj(r, v), ppo.GaeConfig(0.9, 0.0))
    delta = r + 0.9 * np.append(v[1:], 0.0) - v
    np.testing.assert_array_equal(adv, delta)


def test_gae_gamma_lambda_one_is_reward_to_go():
    r = np.array([1.0, -2.0, 0.5, 3.0])
    adv = _kernels.gae(r, np.zeros(4), np.array([0, 0, 0, 1.0]), 0.0, 1.0, 1.0)
    np.testing.assert_allclose(adv, np.cumsum(r[::-1])[::-1], rtol=0, atol=1e-15)


def test_gae_matches_double_sum():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 30))
        r, v = rng.normal(size=n), rng.normal(size=n)
        last = float(rng.normal()) if rng.random() < 0.5 else 0.0
        g, lam = float(rng.uniform(0.5, 0.99)), float(rng.uniform(0.0, 1.0))
        adv = ppo.gae_advantages(_traj(r, v, last), ppo.GaeConfig(g, lam))
        np.testing.assert_allclose(adv, gae_double_sum(r, v, last, g, lam), rtol=0, atol=1e-12)


def test_gae_rejects_empty_and_bad_config():
    with pytest.raises(ValueError):
        ppo.gae_advantages(_traj([], []), ppo.GaeConfig())
    for g, lam in ((1.0, 0.9), (0.0, 0.9), (0.9, 1.5), (0.9, -0.1)):
        with pytest.raises(ValueError):
            ppo.GaeConfig(g, lam)


# --- clip algebra ----------------------------------------------------------------

def test_clip_g_cases():
    assert ppo.clip_g(0.2, 0.0) == 0.0
    assert ppo.clip_g(0.2, 1.0) == 1.2
    assert ppo.clip_g(0.2, -1.0) == 0.8 * -1.0


@pytest.mark.parametrize("ratio,adv,expected,clipped", [
    (1.0, 2.0, 2.0, False),
    (2.0, 1.0, 1.2, True),
    (0.5, -1.0, -0.8, True),
])
def test_clipped_surrogate_cases(ratio, adv, expected, clipped):
    obj, _, mask = ppo.clipped_surrogate(ratio, adv, 0.2)
    assert obj == expected and bool(mask) == clipped


def test_ratio_one_at_old_params():
    rng = np.random.default_rng(2)
    actor = DenseNet((6, 8, ppo.HEAD_DIM), rng, out_scale=0.1)
    batch = random_batch(rng, 32)
    head = ppo.HybridPolicyOutput.from_raw(actor(batch.obs))
    batch.old_logprob = ppo.log_prob(head, batch.rho, batch.u_p, batch.u_f, BOUNDS)
    res = ppo.clipped_actor_loss(batch, actor, BOUNDS, 0.2)
    assert res.clip_fraction == 0.0
    assert res.mean_ratio == pytest.approx(1.0, abs=1e-15)
    assert res.objective == pytest.approx(batch.advantages.mean(), abs=1e-14)


def test_flat_region_gradient_is_zero():
    rng = np.random.default_rng(3)
    actor = DenseNet((6, 8, ppo.HEAD_DIM), rng, out_scale=0.1)
    batch = random_batch(rng, 1)
    head = ppo.HybridPolicyOutput.from_raw(actor(batch.obs))
    lp = ppo.log_prob(head, batch.rho, batch.u_p, batch.u_f, BOUNDS)
    for adv, shift in ((1.0, -1.0), (-1.0, 1.0)):   # ratio e or 1/e: deep inside the clip region
        batch.advantages = np.array([adv])
        batch.old_logprob = lp + shift
        res = ppo.clipped_actor_loss(batch, actor, BOUNDS, 0.2, c2=0.0)
        assert res.clip_fraction == 1.0
        assert np.all(res.grad == 0.0)


def test_non_finite_ratio_excluded():
    rng = np.random.default_rng(4)
    actor = DenseNet((6, 8, ppo.HEAD_DIM), rng, out_scale=0.1)
    batch = random_batch(rng, 4)
    batch.old_logprob[1] = -np.inf
    res = ppo.clipped_actor_loss(batch, actor, BOUNDS, 0.2)
    assert res.excluded == 1 and np.all(np.isfinite(res.grad)) and 0.0 <= res.clip_fraction <= 1.0


# --- policy head -----------------------------------------------------------------

def _head(logit=0.0, mu_p=0.0, ls_p=0.0, mu_f=0.0, ls_f=0.0):
    return ppo.HybridPolicyOutput.from_raw([logit, mu_p, ls_p, mu_f, ls_f])


def test_log_std_clamped():
    h = _head(ls_p=-9.0, ls_f=5.0)
    assert h.log_std_p == -5.0 and h.log_std_f == 2.0
    assert not h.pass_p and not h.pass_f


def test_entropy_max_at_logit_zero():
    base = float(ppo.entropy(_head(0.0)))
    for z in (-2.0, -0.1, 1e-3, 0.5, 4.0):
        assert float(ppo.entropy(_head(z))) < base
    assert base == pytest.approx(np.log(2) + 2 * 0.5 * np.log(2 * np.pi * np.e), rel=1e-14)


def test_saturated_logit_always_offloads():
    rng = np.random.default_rng(5)
    h = _head(20.0)
    assert all(ppo.act(h, BOUNDS, rng)[0].rho == 1 for _ in range(10_000))


def test_samples_within_bounds_at_clamp_floor():
    rng = np.random.default_rng(6)
    h = _head(-20.0, mu_p=0.0, ls_p=-5.0, mu_f=0.0, ls_f=-5.0)
    fs = np.array([ppo.act(h, BOUNDS, rng)[0].f for _ in range(100_000)])
    assert np.all((fs >= BOUNDS.f_min) & (fs <= BOUNDS.f_max))
    h = _head(20.0, ls_p=-5.0)
    ps = np.array([ppo.act(h, BOUNDS, rng)[0].p for _ in range(100_000)])
    assert np.all((ps >= BOUNDS.p_min) & (ps <= BOUNDS.p_max))


def test_logprob_recomputed_and_forced_f_keeps_density():
    rng = np.random.default_rng(7)
    for _ in range(200):
        h = _head(*rng.normal(size=5))
        a, lp = ppo.act(h, BOUNDS, rng)
        assert float(ppo.log_prob(h, a.rho, a.u_p, a.u_f, BOUNDS)) == pytest.approx(lp, abs=1e-12)
        if a.rho == 1:
            assert a.f == BOUNDS.f_idle and a.p > 0
            # the sampled frequency still shapes the density
            assert float(ppo.log_prob(h, 1, a.u_p, a.u_f + 1.0, BOUNDS)) != lp
        else:
            assert a.p == 0.0


def test_bernoulli_frequency():
    rng = np.random.default_rng(8)
    h = _head(0.8)
    freq = np.mean([ppo.act(h, BOUNDS, rng)[0].rho for _ in range(20_000)])
    assert abs(freq - 1 / (1 + np.exp(-0.8))) < 0.01


# --- critic and combined update ------------------------------------------------------

def _const_critic(value):
    net = DenseNet((6, 1), params=np.zeros(7))
    net.biases[0][0] = value
    return net


def _batch_with_returns(returns):
    n = len(returns)
    return ppo.Batch(np.zeros((n, 6)), np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n),
                     np.asarray(returns, float))


def test_critic_loss_cases():
    assert ppo.critic_loss(_batch_with_returns([1.5, 1.5]), _const_critic(1.5))[0] == 0.0
    assert ppo.critic_loss(_batch_with_returns([3.0]), _const_critic(1.0))[0] == 4.0
    assert ppo.critic_loss(_batch_with_returns([3.0, 1.0]), _const_critic(1.0))[0] == 2.0


def _nets(seed):
    rng = np.random.default_rng(seed)
    actor = DenseNet((6, 16, ppo.HEAD_DIM), rng, out_scale=0.1)
    critic = DenseNet((6, 16, 1), rng)
    return actor, critic, Adam(actor.n_params, 3e-4), Adam(critic.n_params, 3e-4)


def test_zero_advantage_null_update():
    actor, critic, ao, co = _nets(9)
    batch = random_batch(np.random.default_rng(10), 40)
    batch.advantages = np.zeros(40)
    a0, c0 = actor.params.copy(), critic.params.copy()
    ppo.combined_update(batch, actor, critic, ao, co, BOUNDS, c1=0.0, c2=0.0, epsilon=0.2, epochs=3,
                        minibatch=16, rng=np.random.default_rng(0), normalize=False)
    np.testing.assert_allclose(actor.params, a0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(critic.params, c0, rtol=0, atol=1e-12)


def test_entropy_bonus_raises_entropy():
    actor, critic, ao, co = _nets(11)
    batch = random_batch(np.random.default_rng(12), 64)
    before = ppo.clipped_actor_loss(batch, actor, BOUNDS, 0.2).entropy
    ppo.combined_update(batch, actor, critic, ao, co, BOUNDS, c1=0.5, c2=50.0, epsilon=0.2, epochs=1,
                        minibatch=64, rng=np.random.default_rng(0))
    assert ppo.clipped_actor_loss(batch, actor, BOUNDS, 0.2).entropy >= before


def test_update_stats_and_golden_checksum():
    actor, critic, ao, co = _nets(13)
    batch = random_batch(np.random.default_rng(14), 50)
    stats = ppo.combined_update(batch, actor, critic, ao, co, BOUNDS, c1=0.5, c2=0.01, epsilon=0.2, epochs=4,
                                minibatch=16, rng=np.random.default_rng(15))
    assert 0.0 <= stats["clip_fraction"] <= 1.0 and stats["excluded"] == 0
    checksum = (float(actor.params.sum()), float(critic.params.sum()))
    assert checksum == pytest.approx(GOLDEN_CHECKSUM, rel=0, abs=1e-12)


GOLDEN_CHECKSUM = (8.517234735494133, -2.689411033046696)


def test_batch_from_trajectory_returns():
    t = _traj([1.0, 2.0], [0.5, 0.25])
    b = ppo.batch_from_trajectory(t, ppo.GaeConfig(0.9, 0.8))
    np.testing.assert_array_equal(b.returns, b.advantages + t.values)
    assert len(ppo.Batch.concat([b, b.take(np.array([0]))])) == 3
