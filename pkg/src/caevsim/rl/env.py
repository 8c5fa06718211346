"""Closed-loop training environment and the attack-scenario sampler."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from ..attacks import AttackProfile, AttackSet
from ..errors import SimulationError
from .policy import reward

log = logging.getLogger(__name__)

REWARD_FLOOR = -1000.0


def sample_attacks(dist, rng: np.random.Generator, kappa: float = 10.0,
                   max_tries: int = 1000) -> AttackSet:
    """Draw one training scenario.

    Modes: none / accel only / current only / both, with the configured
    probabilities. Magnitudes are uniform in [-max, max]; start times are
    uniform in [0, t_start_max]. Draws whose combined accel-equivalent,
    |delta_a - V_nom * delta_I / kappa|, exceeds the action
    budget are rejected: no admissible u_RL can cancel them, so they only add
    unavoidable -1000 rewards.
    """
    u = rng.random()
    p0 = dist.p_no_attack
    p1 = p0 + dist.p_accel_only
    p2 = p1 + dist.p_current_only
    if u < p0:
        return AttackSet([])
    use_a = u < p1 or u >= p2
    use_i = u >= p1
    for _ in range(max_tries):
        da = rng.uniform(-dist.delta_a_max, dist.delta_a_max) if use_a else 0.0
        di = rng.uniform(-dist.delta_I_max, dist.delta_I_max) if use_i else 0.0
        if abs(da - dist.nominal_voltage * di / kappa) <= dist.budget:
            break
    else:  # pragma: no cover - the feasible set always has positive measure
        raise RuntimeError("attack sampler could not find a feasible draw")
    profiles = []
    if use_a:
        profiles.append(AttackProfile(target="accel_comm", magnitude=da,
                                      t_start=rng.uniform(0.0, dist.t_start_max)))
    if use_i:
        profiles.append(AttackProfile(target="current_sensor", magnitude=di,
                                      t_start=rng.uniform(0.0, dist.t_start_max)))
    return AttackSet(profiles)


class DefenderEnv:
    """One decision per ``defender.decision_ticks`` physics ticks.

    ``step`` takes the already-gated action; the caller decides (via
    :attr:`residual_active`) whether the policy acts or u_RL is held at 0.
    """

    def __init__(self, cfg, steps_per_episode: int | None = None):
        self.base = cfg
        self.steps = steps_per_episode or cfg.ppo.steps_per_episode
        self.ticks = cfg.defender.decision_ticks
        duration = self.steps * self.ticks * cfg.sim.dt
        self.cfg = cfg.replace(
            sim=dataclasses.replace(cfg.sim, duration=duration),
            defender=dataclasses.replace(cfg.defender, enabled=False, policy=None))
        self.world = None
        self.n = 0

    def reset(self, attacks: AttackSet | None = None):
        from ..engine import World

        cfg = self.cfg if attacks is None else self.cfg.replace(attacks=attacks)
        self.world = World(cfg)
        self.n = 0
        return self.observation()

    def observation(self):
        return self.world.observation()

    @property
    def residual_active(self) -> bool:
        return self.world.residual_active

    def step(self, u_rl: float):
        """Hold ``u_rl`` for one decision period; returns (obs, reward, done, info)."""
        w = self.world
        w.set_u_rl(float(u_rl))
        self.n += 1
        try:
            w.advance(self.ticks)
        except SimulationError as exc:
            log.warning("episode diverged: %s", exc)
            return np.zeros(2), REWARD_FLOOR, True, {"diverged": True}
        r = reward(w.tracking_error)
        done = self.n >= self.steps
        return self.observation(), r, done, {"diverged": False,
                                             "e": w.tracking_error,
                                             "e_dot": w.tracking_error_rate}
