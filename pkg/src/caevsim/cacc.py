"""CACC spacing law with the communicated-acceleration attack surface."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .platoon import VehicleState


@dataclass(frozen=True)
class CaccGains:
    k_p: float = 0.7
    k_d: float = 1.0
    h: float = 0.6
    d_r: float = 5.0

    def __post_init__(self):
        for name in ("k_p", "k_d", "h", "d_r"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"cacc.{name} must be positive")


@dataclass(frozen=True)
class CommInputs:
    w_c: float
    a_c: float


def tracking_error(state: VehicleState, gains: CaccGains, w_c: float):
    """Spacing error and its rate.

    The rate is evaluated from the motion equations rather than by
    differencing: de/dt = (w_c - w) - h a.
    """
    e = state.d - gains.h * state.w - gains.d_r
    e_dot = (w_c - state.w) - gains.h * state.a
    return e, e_dot


def required_input(e: float, e_dot: float, a_c: float, delta_a: float,
                   gains: CaccGains) -> float:
    return gains.k_p * e + gains.k_d * e_dot + a_c + delta_a
