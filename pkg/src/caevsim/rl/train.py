"""Episode loop: sample an attack scenario, roll out, one PPO update."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .checkpoint import save_policy
from .env import DefenderEnv, sample_attacks
from .policy import PolicyParameters, sample_action
from .ppo import Adam, Trajectory, ppo_update

log = logging.getLogger(__name__)


def rollout(env: DefenderEnv, params: PolicyParameters, attacks, rng,
            gating: bool = True, shaping: float = 0.0,
            horizon: float = 0.0) -> tuple[Trajectory, float]:
    """One episode. Returns the trajectory and its unshaped return.

    ``shaping`` adds a dense tracking penalty -shaping*|e| per step as a
    separate bonus. The +10/-1000 reward is flat outside the 1 m band, so
    without it a policy that has already left the band sees no gradient.
    """
    traj = Trajectory()
    obs = env.reset(attacks)
    total = 0.0
    done = False
    while not done:
        active = env.residual_active if gating else True
        value = float(params.value(obs[None, :])[0])
        if active:
            raw, clamped, logp = sample_action(params, obs, rng)
        else:
            raw, clamped, logp = 0.0, 0.0, 0.0
        next_obs, r, done, info = env.step(clamped)
        if info["diverged"]:
            bonus = 0.0
        else:
            bonus = -shaping * abs(info["e"] + horizon * info["e_dot"])
        traj.append(obs, raw, logp, r, value, done, active, bonus)
        total += r
        obs = next_obs
    return traj, total


def train(cfg, episodes: int | None = None, checkpoint_path=None, checkpoint_every: int = 50,
          callback=None):
    """Train a defender from scratch; returns ``(params, episode_returns)``.

    Everything random (weights, attack draws, action noise, minibatch order)
    comes from one generator seeded with ``ppo.seed``, so a rerun reproduces
    the curve and the final weights exactly.
    """
    hyper = cfg.ppo
    episodes = hyper.episodes_max if episodes is None else int(episodes)
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(hyper.seed)
    params = PolicyParameters.init(rng, cfg.platoon.a_min, cfg.platoon.a_max,
                                   hyper.init_log_std)
    params.config_hash = cfg.config_hash()
    optimizer = Adam(params.get_flat().size, hyper.lr)
    env = DefenderEnv(cfg)
    curve = []
    for ep in range(episodes):
        attacks = sample_attacks(cfg.training, rng, cfg.battery.kappa)
        traj, total = rollout(env, params, attacks, rng, cfg.defender.gating,
                              hyper.shaping, hyper.shaping_horizon)
        curve.append(total)
        params, diag = ppo_update(params, traj, hyper, rng, optimizer)
        if (ep + 1) % 10 == 0 or ep == 0:
            log.info("episode %d/%d return %.0f entropy %.3f std %.3f", ep + 1, episodes,
                     total, diag.get("entropy", float("nan")), params.std)
        if callback is not None:
            callback(ep, total, diag)
        if checkpoint_path is not None and (ep + 1) % checkpoint_every == 0:
            _checkpoint(params, curve, checkpoint_path)
    params.meta = {"episodes": episodes, "seed": hyper.seed}
    if checkpoint_path is not None:
        _checkpoint(params, curve, checkpoint_path)
    return params, np.asarray(curve)


def _checkpoint(params, curve, path):
    path = Path(path)
    params.meta = dict(params.meta, episodes_done=len(curve))
    save_policy(params, path)
    write_curve(curve, path.with_suffix(".curve.csv"))


def write_curve(curve, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("episode,return\n")
        for i, r in enumerate(curve):
            fh.write(f"{i + 1},{r:.9g}\n")
    return path


def read_curve(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1]
