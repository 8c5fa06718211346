"""Gaussian actor-critic policy for the corrective powertrain input."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from .mlp import MLP

OBS_SCALE = (10.0, 1.0)  # e in metres, residual norm
HIDDEN = (64, 64)
LOG2PI = math.log(2.0 * math.pi)


def observe(e: float, r_v_norm: float, scale=OBS_SCALE) -> np.ndarray:
    return np.array([e / scale[0], r_v_norm / scale[1]])


def unobserve(obs, scale=OBS_SCALE):
    return float(obs[0] * scale[0]), float(obs[1] * scale[1])


def reward(e: float) -> float:
    """+10 inside the 1 m spacing band (inclusive), -1000 outside."""
    return float(kernels.reward_value(float(e)))


@dataclass
class PolicyParameters:
    actor: MLP
    critic: MLP
    log_std: float = 0.5
    a_min: float = -10.0
    a_max: float = 10.0
    obs_scale: tuple = OBS_SCALE
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, rng: np.random.Generator, a_min=-10.0, a_max=10.0, log_std=0.5,
             hidden=HIDDEN):
        actor = MLP.init((2, *hidden, 1), rng, out_gain=0.01)
        critic = MLP.init((2, *hidden, 1), rng, out_gain=1.0)
        params = cls(actor, critic, log_std, a_min, a_max)
        params.log_std = params.clip_log_std(log_std)
        return params

    @property
    def log_std_bounds(self):
        return math.log(1e-3), math.log(self.a_max - self.a_min)

    def clip_log_std(self, value: float) -> float:
        lo, hi = self.log_std_bounds
        return float(min(max(value, lo), hi))

    @property
    def std(self) -> float:
        return math.exp(self.log_std)

    @property
    def half_range(self) -> float:
        return 0.5 * (self.a_max - self.a_min)

    @property
    def mid(self) -> float:
        return 0.5 * (self.a_max + self.a_min)

    def mean(self, obs):
        """Squashed action mean for a batch of observations, shape (B,)."""
        z = self.actor(obs)[:, 0]
        return self.mid + self.half_range * np.tanh(z)

    def value(self, obs):
        return self.critic(obs)[:, 0]

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.actor.copy(), self.critic.copy(), self.log_std,
                                self.a_min, self.a_max, tuple(self.obs_scale),
                                self.config_hash, dict(self.meta))

    def n_actor(self) -> int:
        return self.actor.n_params

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.actor.get_flat(), [self.log_std],
                               self.critic.get_flat()])

    def set_flat(self, flat) -> None:
        na = self.actor.n_params
        self.actor.set_flat(flat[:na])
        self.log_std = float(flat[na])
        self.critic.set_flat(flat[na + 1:])

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.get_flat())))


def gaussian_log_prob(action, mean, log_std):
    std = math.exp(log_std)
    z = (np.asarray(action) - mean) / std
    return -0.5 * z * z - log_std - 0.5 * LOG2PI


def gaussian_entropy(log_std: float) -> float:
    return 0.5 + 0.5 * LOG2PI + log_std


def sample_action(params: PolicyParameters, obs, rng: np.random.Generator):
    """Draw one action; returns ``(raw, clamped, log_prob)``.

    The log-probability is of the unclamped draw; the clamped value is what
    reaches the powertrain.
    """
    mean = params.mean(np.atleast_2d(obs))[0]
    raw = mean + params.std * rng.standard_normal()
    logp = float(gaussian_log_prob(raw, mean, params.log_std))
    return float(raw), float(min(max(raw, params.a_min), params.a_max)), logp


def act(params: PolicyParameters, obs, mode: str = "deterministic",
        residual_active: bool = True, rng: np.random.Generator | None = None) -> float:
    """Corrective input u_RL; exactly zero while the residuals are quiet."""
    if not residual_active:
        return 0.0
    if mode == "deterministic":
        mean = params.mean(np.atleast_2d(obs))[0]
        return float(min(max(mean, params.a_min), params.a_max))
    if mode != "stochastic":
        raise ValueError(f"unknown action mode {mode!r}")
    if rng is None:
        raise ValueError("stochastic mode needs an rng")
    return sample_action(params, obs, rng)[1]
