"""Clipped-surrogate PPO update with generalized advantage estimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .policy import PolicyParameters, gaussian_entropy, gaussian_log_prob

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PpoHyperparams:
    gamma: float = 0.99
    lambda_gae: float = 0.95
    clip_eps: float = 0.2
    lr: float = 1e-3
    epochs_per_update: int = 10
    minibatch: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    episodes_max: int = 500
    steps_per_episode: int = 300
    seed: int = 0
    reward_scale: float = 1e-5
    max_grad_norm: float = 0.5
    init_log_std: float = 2.2
    shaping: float = 100.0
    shaping_horizon: float = 2.0
    mirror: bool = True

    def __post_init__(self):
        problems = []
        if not 0 < self.gamma <= 1:
            problems.append(("ppo.gamma", "must lie in (0, 1]"))
        if not 0 < self.lambda_gae <= 1:
            problems.append(("ppo.lambda_gae", "must lie in (0, 1]"))
        if not 0 < self.clip_eps < 1:
            problems.append(("ppo.clip_eps", "must lie in (0, 1)"))
        if not self.lr > 0:
            problems.append(("ppo.lr", "must be positive"))
        for name in ("epochs_per_update", "minibatch", "episodes_max", "steps_per_episode"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                problems.append((f"ppo.{name}", "must be a positive integer"))
        for name in ("entropy_coef", "value_coef"):
            if getattr(self, name) < 0:
                problems.append((f"ppo.{name}", "must be non-negative"))
        if not self.reward_scale > 0:
            problems.append(("ppo.reward_scale", "must be positive"))
        if self.shaping_horizon < 0:
            problems.append(("ppo.shaping_horizon", "must be non-negative"))
        if self.shaping < 0:
            problems.append(("ppo.shaping", "must be non-negative"))
        if not self.max_grad_norm > 0:
            problems.append(("ppo.max_grad_norm", "must be positive"))
        if problems:
            raise ConfigError("; ".join(f"{p}: {m}" for p, m in problems), problems)


@dataclass
class Trajectory:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    active: list = field(default_factory=list)
    bonus: list = field(default_factory=list)

    def append(self, obs, action, log_prob, reward, value, done, active=True, bonus=0.0):
        self.obs.append(np.asarray(obs, dtype=float))
        self.actions.append(float(action))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))
        self.active.append(bool(active))
        self.bonus.append(float(bonus))

    def __len__(self):
        return len(self.rewards)

    def arrays(self):
        return (np.array(self.obs).reshape(len(self), -1), np.array(self.actions),
                np.array(self.log_probs), np.array(self.rewards),
                np.array(self.values), np.array(self.dones, dtype=float),
                np.array(self.active, dtype=bool))


def gae_advantages(traj: Trajectory, gamma: float, lambda_gae: float,
                   last_value: float = 0.0, reward_scale: float = 1.0):
    """Raw (unnormalised) GAE advantages and the matching return targets.

    Any shaping ``bonus`` recorded alongside a reward is added to it here.
    """
    n = len(traj)
    if n == 0:
        raise ValueError("empty trajectory")
    rewards = np.asarray(traj.rewards, dtype=float)
    if traj.bonus:
        rewards = rewards + np.asarray(traj.bonus, dtype=float)
    rewards = rewards * reward_scale
    values = np.asarray(traj.values, dtype=float)
    dones = np.asarray(traj.dones, dtype=float)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        next_value = values[t + 1] if t + 1 < n else last_value
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lambda_gae * nonterminal * running
        adv[t] = running
    return adv, adv + values


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


def clipped_surrogate(ratio, adv, clip_eps):
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def ppo_loss_and_grad(params: PolicyParameters, obs, actions, old_log_probs, advantages,
                      returns, mask, hyper: PpoHyperparams):
    """PPO loss to minimise and its gradient w.r.t. ``params.get_flat()``.

    loss = -mean_active(surrogate) + value_coef * mean((V - R)^2)
           - entropy_coef * entropy
    """
    obs = np.atleast_2d(obs)
    b = obs.shape[0]
    mask = np.asarray(mask, dtype=bool)
    n_active = int(mask.sum())

    z, actor_cache = params.actor.forward(obs)
    z = z[:, 0]
    tz = np.tanh(z)
    mean = params.mid + params.half_range * tz
    std = params.std
    logp = gaussian_log_prob(actions, mean, params.log_std)
    ratio = np.exp(logp - old_log_probs)
    surr = clipped_surrogate(ratio, advantages, hyper.clip_eps)

    clipped = np.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps)
    use_unclipped = ratio * advantages <= clipped * advantages
    d_surr_d_logp = np.where(use_unclipped, ratio * advantages, 0.0)

    if n_active:
        policy_loss = -float(surr[mask].sum()) / n_active
        d_logp = np.where(mask, -d_surr_d_logp / n_active, 0.0)
    else:
        policy_loss = 0.0
        d_logp = np.zeros(b)

    entropy = gaussian_entropy(params.log_std)
    v, critic_cache = params.critic.forward(obs)
    v = v[:, 0]
    value_loss = float(np.mean((v - returns) ** 2))
    loss = policy_loss + hyper.value_coef * value_loss - hyper.entropy_coef * entropy

    resid = np.asarray(actions) - mean
    d_mean = d_logp * resid / std ** 2
    d_z = d_mean * params.half_range * (1.0 - tz ** 2)
    g_actor = params.actor.backward(actor_cache, d_z[:, None])
    g_log_std = float(np.sum(d_logp * (resid ** 2 / std ** 2 - 1.0))) - hyper.entropy_coef
    d_v = hyper.value_coef * 2.0 * (v - returns) / b
    g_critic = params.critic.backward(critic_cache, d_v[:, None])

    grad = np.concatenate([g_actor, [g_log_std], g_critic])
    info = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_frac": float(np.mean(np.abs(ratio[mask] - 1.0) > hyper.clip_eps)) if n_active else 0.0,
        "approx_kl": float(np.mean(old_log_probs[mask] - logp[mask])) if n_active else 0.0,
    }
    return loss, grad, info


def clip_grad_norms(grad, split, max_norm):
    """Clip the actor (+ log_std) and critic blocks to ``max_norm`` separately.

    The networks share no weights, so one joint norm would let the critic's
    large regression gradient shrink every policy step.
    """
    grad = np.array(grad, dtype=float)
    for block in (slice(0, split), slice(split, None)):
        norm = float(np.linalg.norm(grad[block]))
        if norm > max_norm:
            grad[block] *= max_norm / norm
    return grad


class Adam:
    def __init__(self, n, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self):
        return self.m.copy(), self.v.copy(), self.t

    def restore(self, state):
        self.m, self.v, self.t = state[0].copy(), state[1].copy(), state[2]


def mirror_batch(obs, actions, old_logp, adv, returns, mask, mid=0.0):
    """Append the sign-flipped copy of every sample.

    Flipping the attack sign flips e and the best action but leaves the
    residual norm alone, so (-e, r, -a) is as good a sample as (e, r, a).
    The mirrored action was drawn with the original action's probability,
    so that is its behaviour log-probability in the importance ratio.
    """
    obs_m = obs * np.array([-1.0, 1.0])
    act_m = 2.0 * mid - actions
    return (np.vstack([obs, obs_m]), np.concatenate([actions, act_m]),
            np.concatenate([old_logp, old_logp]), np.concatenate([adv, adv]),
            np.concatenate([returns, returns]), np.concatenate([mask, mask]))


def ppo_update(params: PolicyParameters, traj: Trajectory, hyper: PpoHyperparams,
               rng: np.random.Generator, optimizer: Adam | None = None,
               last_value: float = 0.0):
    """Run the minibatch epochs in place; returns ``(params, diagnostics)``.

    A non-finite loss or gradient aborts the update and restores the
    parameters (and optimizer moments) from before it started.
    """
    if optimizer is None:
        optimizer = Adam(params.get_flat().size, hyper.lr)
    obs, actions, old_logp, _, _, _, mask = traj.arrays()
    adv, returns = gae_advantages(traj, hyper.gamma, hyper.lambda_gae, last_value,
                                  hyper.reward_scale)
    if mask.any():
        adv_n = np.zeros_like(adv)
        adv_n[mask] = normalize_advantages(adv[mask])
    else:
        adv_n = np.zeros_like(adv)

    if hyper.mirror:
        obs, actions, old_logp, adv_n, returns, mask = mirror_batch(
            obs, actions, old_logp, adv_n, returns, mask, params.mid)

    backup = params.get_flat().copy()
    opt_backup = optimizer.state()
    n = len(obs)
    diag = {"aborted": False, "updates": 0}
    infos = []
    for _ in range(hyper.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, hyper.minibatch):
            idx = order[start:start + hyper.minibatch]
            loss, grad, info = ppo_loss_and_grad(params, obs[idx], actions[idx],
                                                 old_logp[idx], adv_n[idx],
                                                 returns[idx], mask[idx], hyper)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                log.warning("non-finite PPO loss; update aborted and parameters restored")
                params.set_flat(backup)
                optimizer.restore(opt_backup)
                diag["aborted"] = True
                return params, diag
            grad = clip_grad_norms(grad, params.n_actor() + 1, hyper.max_grad_norm)
            theta = optimizer.step(params.get_flat(), grad)
            params.set_flat(theta)
            params.log_std = params.clip_log_std(params.log_std)
            diag["updates"] += 1
            infos.append(info)
    for key in ("loss", "policy_loss", "value_loss", "entropy", "clip_frac", "approx_kl"):
        diag[key] = float(np.mean([i[key] for i in infos])) if infos else 0.0
    return params, diag
