"""Declarative false-data-injection profiles for the two attack surfaces."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError

TARGETS = {"accel_comm": kernels.TARGET_ACCEL, "current_sensor": kernels.TARGET_CURRENT}
SHAPES = {
    "step": kernels.SHAPE_STEP,
    "ramp": kernels.SHAPE_RAMP,
    "pulse": kernels.SHAPE_PULSE,
    "sine": kernels.SHAPE_SINE,
}


@dataclass(frozen=True)
class AttackProfile:
    """One injected signal.

    Active on ``[t_start, t_end)``; ``t_end=None`` leaves it open. ``ramp``
    reaches ``magnitude`` after ``|magnitude| / slope`` seconds (or at
    ``t_end`` when no slope is given). ``pulse`` is a rectangular train with
    the given ``frequency`` and ``duty``; ``sine`` oscillates at ``frequency``.
    Magnitudes are m/s^2 for ``accel_comm`` and A for ``current_sensor``.
    """

    target: str
    shape: str = "step"
    magnitude: float = 0.0
    t_start: float = 0.0
    t_end: float | None = None
    slope: float | None = None
    frequency: float | None = None
    duty: float = 0.5

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ConfigError(f"unknown attack target {self.target!r}")
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown attack shape {self.shape!r}")
        if not (self.t_start >= 0 and math.isfinite(self.t_start)):
            raise ConfigError("t_start must be finite and >= 0")
        if self.t_end is not None and not self.t_end > self.t_start:
            raise ConfigError("t_end must be greater than t_start")
        if not math.isfinite(self.magnitude):
            raise ConfigError("magnitude must be finite")
        if self.shape == "ramp" and self.slope is None and self.t_end is None:
            raise ConfigError("ramp needs either slope or a closed t_end")
        if self.slope is not None and not self.slope > 0:
            raise ConfigError("slope must be positive")
        if self.shape in ("pulse", "sine") and not (self.frequency or 0) > 0:
            raise ConfigError(f"{self.shape} attack needs a positive frequency")
        if not 0 < self.duty <= 1:
            raise ConfigError("duty must lie in (0, 1]")

    @property
    def end(self) -> float:
        return math.inf if self.t_end is None else float(self.t_end)

    def row(self) -> list:
        return [
            TARGETS[self.target], SHAPES[self.shape], self.magnitude, self.t_start,
            self.end, self.frequency or 0.0, self.slope or 0.0, self.duty,
        ]


class AttackSet:
    """Immutable collection; rejects overlapping windows on the same target."""

    def __init__(self, profiles=()):
        self.profiles = tuple(profiles)
        by_target = {}
        for p in self.profiles:
            by_target.setdefault(p.target, []).append(p)
        for target, group in by_target.items():
            group = sorted(group, key=lambda p: p.t_start)
            for prev, nxt in zip(group, group[1:]):
                if nxt.t_start < prev.end:
                    raise ConfigError(
                        f"overlapping {target} attacks starting at "
                        f"{prev.t_start:g} s and {nxt.t_start:g} s")
        table = np.array([p.row() for p in self.profiles], dtype=float)
        self._table = table.reshape(len(self.profiles), kernels.N_ACOL)
        self._table.setflags(write=False)

    @property
    def table(self) -> np.ndarray:
        return self._table

    def __len__(self):
        return len(self.profiles)

    def __repr__(self):
        return f"AttackSet({list(self.profiles)!r})"

    def with_magnitude(self, target: str, magnitude: float) -> "AttackSet":
        """Copy with every ``target`` profile set to ``magnitude``.

        A missing target gets an open step from t = 0.
        """
        profiles = []
        found = False
        for p in self.profiles:
            if p.target == target:
                found = True
                p = AttackProfile(**{**p.__dict__, "magnitude": float(magnitude)})
            profiles.append(p)
        if not found:
            profiles.append(AttackProfile(target=target, magnitude=float(magnitude)))
        return AttackSet(profiles)


def evaluate(attacks: AttackSet, t: float):
    """Return ``(delta_a, delta_I)`` at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    da, di = kernels.eval_attacks(attacks.table, float(t))
    return float(da), float(di)


def case_study_attacks() -> AttackSet:
    return AttackSet([
        AttackProfile(target="accel_comm", shape="step", magnitude=10.0),
        AttackProfile(target="current_sensor", shape="step", magnitude=-2.0),
    ])
