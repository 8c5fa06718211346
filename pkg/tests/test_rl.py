import dataclasses
import json

import numpy as np
import pytest

from caevsim.errors import ConfigError
from caevsim.rl.checkpoint import load_policy, policy_to_dict, save_policy
from caevsim.rl.env import DefenderEnv, sample_attacks
from caevsim.rl.mlp import MLP
from caevsim.rl.policy import (PolicyParameters, act, gaussian_log_prob, observe, reward,
                               sample_action)
from caevsim.rl.ppo import (Adam, PpoHyperparams, Trajectory, clip_grad_norms,
                            gae_advantages, mirror_batch, normalize_advantages,
                            ppo_loss_and_grad, ppo_update)
from caevsim.rl.train import read_curve, rollout, train, write_curve


def make_batch(rng, B=16):
    obs = rng.normal(size=(B, 2))
    actions = rng.normal(size=B) * 3
    old = rng.normal(size=B) - 2
    adv = rng.normal(size=B)
    ret = rng.normal(size=B)
    mask = rng.random(B) < 0.7
    return obs, actions, old, adv, ret, mask


# -- reward and policy -------------------------------------------------------

@pytest.mark.oracle
def test_reward_exact_on_band_edges():
    assert [reward(e) for e in (0.5, 1.0, 1.5)] == [10.0, 10.0, -1000.0]
    assert [reward(-e) for e in (0.5, 1.0, 1.5)] == [10.0, 10.0, -1000.0]


def test_gating_forces_exact_zero(rng):
    p = PolicyParameters.init(rng)
    p.actor.biases[-1][:] = 5.0
    assert act(p, observe(3.0, 0.01), residual_active=False) == 0.0
    assert act(p, observe(3.0, 1.0)) == pytest.approx(10.0 * np.tanh(5.0))


def test_deterministic_action_is_clamped_mean(rng):
    p = PolicyParameters.init(rng)
    obs = observe(0.4, 0.3)
    assert act(p, obs) == pytest.approx(float(p.mean(obs[None])[0]))
    assert -10.0 <= act(p, obs) <= 10.0


def test_stochastic_mode_reproducible(rng):
    p = PolicyParameters.init(rng, log_std=1.0)
    obs = observe(0.4, 0.3)
    a = [act(p, obs, "stochastic", rng=np.random.default_rng(7)) for _ in range(2)]
    assert a[0] == a[1]
    with pytest.raises(ValueError):
        act(p, obs, "stochastic")
    with pytest.raises(ValueError):
        act(p, obs, "greedy")


def test_sample_action_log_prob_is_of_raw_draw(rng):
    p = PolicyParameters.init(rng, log_std=2.5)
    for _ in range(20):
        raw, clamped, logp = sample_action(p, observe(5.0, 1.0), rng)
        assert clamped == min(max(raw, -10.0), 10.0)
        mean = p.mean(observe(5.0, 1.0)[None])[0]
        assert logp == pytest.approx(float(gaussian_log_prob(raw, mean, p.log_std)))


def test_gaussian_log_prob_matches_scipy():
    from scipy.stats import norm
    assert gaussian_log_prob(1.3, 0.2, np.log(0.7)) == pytest.approx(
        norm(0.2, 0.7).logpdf(1.3), rel=1e-12)


def test_log_std_clipped_to_bounds(rng):
    p = PolicyParameters.init(rng, log_std=50.0)
    assert p.std == pytest.approx(20.0)


# -- PPO maths ---------------------------------------------------------------

@pytest.mark.oracle
def test_gae_matches_brute_force():
    rng = np.random.default_rng(0)
    n, gamma, lam = 25, 0.97, 0.9
    traj = Trajectory()
    dones = np.zeros(n, dtype=bool)
    dones[[9, 24]] = True
    for t in range(n):
        traj.append(np.zeros(2), 0.0, 0.0, rng.normal(), rng.normal(), dones[t],
                    bonus=rng.normal())
    last_value = 0.37
    adv, ret = gae_advantages(traj, gamma, lam, last_value, reward_scale=0.5)

    r = 0.5 * (np.array(traj.rewards) + np.array(traj.bonus))
    v = np.array(traj.values)
    brute = np.zeros(n)
    for t in range(n):
        total, disc = 0.0, 1.0
        for k in range(t, n):
            nv = 0.0 if dones[k] else (v[k + 1] if k + 1 < n else last_value)
            total += disc * (r[k] + gamma * nv - v[k])
            if dones[k]:
                break
            disc *= gamma * lam
        brute[t] = total
    np.testing.assert_allclose(adv, brute, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(ret, brute + v, rtol=1e-13, atol=1e-13)


@pytest.mark.oracle
def test_ppo_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    p = PolicyParameters.init(rng, -10, 10, 0.3)
    p.actor.weights[-1] *= 100  # push the mean off zero
    batch = make_batch(rng)
    hyper = PpoHyperparams()
    _, grad, _ = ppo_loss_and_grad(p, *batch, hyper)
    theta = p.get_flat()
    num = np.zeros_like(theta)
    eps = 1e-5
    q = p.copy()
    for i in range(theta.size):
        t = theta.copy()
        t[i] += eps
        q.set_flat(t)
        hi = ppo_loss_and_grad(q, *batch, hyper)[0]
        t[i] -= 2 * eps
        q.set_flat(t)
        lo = ppo_loss_and_grad(q, *batch, hyper)[0]
        num[i] = (hi - lo) / (2 * eps)
    na = p.n_actor()
    for block in (slice(0, na), slice(na, na + 1), slice(na + 1, None)):
        rel = np.linalg.norm(grad[block] - num[block]) / np.linalg.norm(num[block])
        assert rel < 1e-4


def test_clipped_samples_carry_no_policy_gradient(rng):
    p = PolicyParameters.init(rng)
    obs = rng.normal(size=(4, 2))
    acts = p.mean(obs)
    logp_now = gaussian_log_prob(acts, p.mean(obs), p.log_std)
    # ratio = e^1 > 1 + eps with positive advantage: clipped branch wins
    hyper = PpoHyperparams(entropy_coef=0.0, value_coef=0.0)
    _, grad, info = ppo_loss_and_grad(p, obs, acts, logp_now - 1.0, np.ones(4), np.zeros(4),
                                      np.ones(4, bool), hyper)
    assert info["clip_frac"] == 1.0
    assert np.all(grad == 0.0)


def test_normalize_advantages():
    a = normalize_advantages([1.0, 2.0, 3.0, 6.0])
    assert a.mean() == pytest.approx(0.0, abs=1e-15)
    assert a.std() == pytest.approx(1.0, rel=1e-6)


def test_clip_grad_norms_per_block():
    g = np.array([3.0, 4.0, 0.0, 30.0, 40.0])
    out = clip_grad_norms(g, 3, 1.0)
    np.testing.assert_allclose(out, [0.6, 0.8, 0.0, 0.6, 0.8])
    np.testing.assert_array_equal(clip_grad_norms([0.1, 0.1], 1, 1.0), [0.1, 0.1])


def test_adam_first_step_is_lr_times_sign():
    opt = Adam(3, 0.01)
    out = opt.step(np.zeros(3), np.array([2.0, -0.5, 0.0]))
    np.testing.assert_allclose(out, [-0.01, 0.01, 0.0], atol=1e-9)


def test_mirror_batch_flips_error_and_action():
    obs = np.array([[0.3, 1.2]])
    out = mirror_batch(obs, np.array([4.0]), np.array([-1.5]), np.array([0.2]),
                       np.array([3.0]), np.array([True]))
    np.testing.assert_array_equal(out[0], [[0.3, 1.2], [-0.3, 1.2]])
    np.testing.assert_array_equal(out[1], [4.0, -4.0])
    np.testing.assert_array_equal(out[2], [-1.5, -1.5])
    np.testing.assert_array_equal(out[5], [True, True])


def test_ppo_update_moves_mean_toward_advantaged_action(rng):
    p = PolicyParameters.init(rng, log_std=0.0)
    traj = Trajectory()
    obs = observe(0.5, 0.5)
    mean0 = float(p.mean(obs[None])[0])
    for i in range(64):
        a = mean0 + (1.0 if i % 2 else -1.0)
        traj.append(obs, a, float(gaussian_log_prob(a, mean0, 0.0)),
                    10.0 if a > mean0 else -10.0, 0.0, i == 63)
    hyper = PpoHyperparams(mirror=False, reward_scale=1.0, gamma=0.5, lambda_gae=0.5)
    ppo_update(p, traj, hyper, rng)
    assert float(p.mean(obs[None])[0]) > mean0


def test_ppo_update_restores_on_non_finite(rng):
    p = PolicyParameters.init(rng)
    before = p.get_flat().copy()
    traj = Trajectory()
    for i in range(8):
        traj.append(np.array([np.nan, 0.0]), 0.0, 0.0, 1.0, 0.0, i == 7)
    _, diag = ppo_update(p, traj, PpoHyperparams(), rng)
    assert diag["aborted"]
    np.testing.assert_array_equal(p.get_flat(), before)


@pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(clip_eps=1.0), dict(lr=0.0),
                                dict(minibatch=0), dict(shaping=-1.0)])
def test_hyperparameter_validation(kw):
    with pytest.raises(ConfigError):
        PpoHyperparams(**kw)


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    p = PolicyParameters.init(rng, log_std=0.7)
    p.config_hash = "abc"
    path = save_policy(p, tmp_path / "p.json")
    q = load_policy(path)
    np.testing.assert_array_equal(q.get_flat(), p.get_flat())
    obs = rng.normal(size=(5, 2))
    np.testing.assert_array_equal(q.mean(obs), p.mean(obs))
    assert q.config_hash == "abc"


def test_checkpoint_refuses_overwrite(tmp_path, rng):
    p = PolicyParameters.init(rng)
    save_policy(p, tmp_path / "p.json")
    with pytest.raises(FileExistsError):
        save_policy(p, tmp_path / "p.json", force=False)


@pytest.mark.parametrize("mutate", [
    lambda t: t.update(format="other"),
    lambda t: t.update(version=99),
    lambda t: t["actor"]["layers"][0].update(b=[0.0]),
    lambda t: t.update(log_std=float("nan")) or t["actor"]["layers"][0]["W"].__setitem__(0, float("nan")),
])
def test_bad_checkpoints_rejected(tmp_path, rng, mutate):
    tree = policy_to_dict(PolicyParameters.init(rng))
    mutate(tree)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(tree), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_policy(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_policy(tmp_path / "nope.json")


def test_mlp_flat_round_trip(rng):
    net = MLP.init((2, 8, 1), rng)
    other = MLP((2, 8, 1))
    other.set_flat(net.get_flat())
    x = rng.normal(size=(3, 2))
    np.testing.assert_array_equal(other(x), net(x))


# -- environment and training -------------------------------------------------

def test_sampler_respects_ranges_and_budget(cs1_cfg):
    dist = cs1_cfg.training
    rng = np.random.default_rng(0)
    kinds = set()
    for _ in range(400):
        atk = sample_attacks(dist, rng)
        da = sum(p.magnitude for p in atk.profiles if p.target == "accel_comm")
        di = sum(p.magnitude for p in atk.profiles if p.target == "current_sensor")
        assert abs(da) <= dist.delta_a_max and abs(di) <= dist.delta_I_max
        assert abs(da - dist.nominal_voltage * di / 10.0) <= dist.budget + 1e-12
        assert all(0 <= p.t_start <= dist.t_start_max for p in atk.profiles)
        kinds.add(tuple(sorted(p.target for p in atk.profiles)))
    assert len(kinds) == 4


def test_sampler_no_attack_only():
    from caevsim.config import TrainingDistribution
    dist = TrainingDistribution(p_no_attack=1.0, p_accel_only=0.0, p_current_only=0.0)
    assert len(sample_attacks(dist, np.random.default_rng(0))) == 0


def test_env_episode_length_and_reward(default_cfg):
    env = DefenderEnv(default_cfg, steps_per_episode=5)
    obs = env.reset()
    assert obs.shape == (2,)
    assert not env.residual_active
    for i in range(5):
        obs, r, done, info = env.step(0.0)
        assert r == 10.0 and done == (i == 4)
    assert env.world.t == pytest.approx(0.5)


def test_env_reports_divergence(cs1_cfg):
    from caevsim.attacks import AttackProfile, AttackSet
    env = DefenderEnv(cs1_cfg, steps_per_episode=3)
    env.reset(AttackSet([AttackProfile("accel_comm", magnitude=1e300)]))
    obs, r, done, info = env.step(0.0)
    assert info["diverged"] and done and r == -1000.0


def test_rollout_gated_steps_store_zero(cs1_cfg, rng):
    env = DefenderEnv(cs1_cfg, steps_per_episode=4)
    p = PolicyParameters.init(rng)
    from caevsim.attacks import AttackSet
    traj, total = rollout(env, p, AttackSet([]), rng, gating=True)
    assert total == 40.0
    assert traj.active == [False] * 4 and traj.actions == [0.0] * 4


def tiny_cfg(cfg, **ppo):
    ppo = dict(dict(steps_per_episode=20, minibatch=16, epochs_per_update=2), **ppo)
    return cfg.replace(ppo=dataclasses.replace(cfg.ppo, **ppo))


def test_training_is_seeded_and_deterministic(cs1_cfg):
    cfg = tiny_cfg(cs1_cfg)
    p1, c1 = train(cfg, episodes=4)
    p2, c2 = train(cfg, episodes=4)
    np.testing.assert_array_equal(c1, c2)
    np.testing.assert_array_equal(p1.get_flat(), p2.get_flat())
    p3, _ = train(tiny_cfg(cs1_cfg, seed=1), episodes=4)
    assert not np.array_equal(p1.get_flat(), p3.get_flat())


def test_training_checkpoints_and_curve(tmp_path, cs1_cfg):
    path = tmp_path / "pol.json"
    _, curve = train(tiny_cfg(cs1_cfg), episodes=3, checkpoint_path=path, checkpoint_every=2)
    assert load_policy(path).meta["episodes_done"] == 3
    np.testing.assert_array_equal(read_curve(path.with_suffix(".curve.csv")), curve)
    write_curve([1.5, -2.0], tmp_path / "c.csv")
    np.testing.assert_array_equal(read_curve(tmp_path / "c.csv"), [1.5, -2.0])
