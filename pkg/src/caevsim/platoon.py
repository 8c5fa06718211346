"""Leader and ego longitudinal dynamics, plus the leader's drive cycle."""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError


@dataclass(frozen=True)
class VehicleState:
    """Ego kinematics: gap to predecessor ``d``, velocity ``w``, acceleration ``a``."""

    d: float
    w: float
    a: float = 0.0

    @property
    def collision(self) -> bool:
        return self.d <= 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.d, self.w, self.a])


@dataclass(frozen=True)
class LeaderState:
    w_lead: float
    a_lead: float = 0.0


@dataclass(frozen=True)
class DriveCycle:
    times: np.ndarray
    speeds: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        speeds = np.asarray(self.speeds, dtype=float)
        if times.ndim != 1 or times.shape != speeds.shape:
            raise ConfigError("drive cycle needs matching 1-D time and speed columns")
        if times.size == 0:
            raise ConfigError("drive cycle is empty")
        if np.any(np.diff(times) <= 0):
            raise ConfigError("drive cycle times must be strictly increasing")
        if np.any(speeds < 0) or not np.all(np.isfinite(speeds)):
            raise ConfigError("drive cycle speeds must be finite and non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "speeds", speeds)

    @property
    def duration(self) -> float:
        return float(self.times[-1])


def sample_drive_cycle(cycle: DriveCycle, t: float) -> float:
    """Piecewise-linear reference speed at ``t``; held at the end values outside."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return float(np.interp(t, cycle.times, cycle.speeds))


def load_drive_cycle_csv(path) -> DriveCycle:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ConfigError(f"{path}: drive cycle is empty")
            if [h.strip() for h in header] != ["t_s", "v_mps"]:
                raise ConfigError(f"{path}: expected header 't_s,v_mps', got {header!r}")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec or all(not f.strip() for f in rec):
                    continue
                if len(rec) != 2:
                    raise ConfigError(f"{path}:{lineno}: expected 2 columns")
                try:
                    rows.append((float(rec[0]), float(rec[1])))
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read drive cycle {path}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: drive cycle is empty")
    arr = np.array(rows)
    return DriveCycle(arr[:, 0], arr[:, 1])


def write_drive_cycle_csv(cycle: DriveCycle, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("t_s,v_mps\n")
        for t, v in zip(cycle.times, cycle.speeds):
            fh.write(f"{t:.9g},{v:.9g}\n")


@functools.lru_cache(maxsize=1)
def bundled_drive_cycle() -> DriveCycle:
    ref = resources.files("caevsim") / "data" / "drive_cycle.csv"
    with resources.as_file(ref) as p:
        return load_drive_cycle_csv(p)


def synthesize_drive_cycle(step: float = 1.0) -> DriveCycle:
    """Regenerate the bundled cycle: cruise, then smooth climbs and descents.

    Each transition is a smoothstep so the leader's acceleration stays below
    about 0.08 m/s^2. The proportional current loop passes only
    K_b V / (1 + K_b V) of the commanded input to the powertrain, so the
    follower's steady spacing error grows with leader acceleration.
    """
    # (start time, end time, start speed, end speed)
    segments = [
        (0.0, 40.0, 13.0, 13.0),
        (40.0, 265.0, 13.0, 25.0),
        (265.0, 330.0, 25.0, 25.0),
        (330.0, 600.0, 25.0, 11.0),
    ]
    times = np.arange(0.0, 600.0 + 0.5 * step, step)
    speeds = np.empty_like(times)
    for i, t in enumerate(times):
        for t0, t1, v0, v1 in segments:
            if t0 <= t <= t1:
                s = (t - t0) / (t1 - t0)
                speeds[i] = v0 + (v1 - v0) * s * s * (3.0 - 2.0 * s)
                break
    return DriveCycle(times, speeds)


def leader_step(state: LeaderState, w_ref: float, dt: float,
                k_lead: float = 1.0, a_min: float = -10.0,
                a_max: float = 10.0) -> LeaderState:
    """First-order speed tracker with acceleration limits."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    w_new, a_lead = kernels.leader_update(float(state.w_lead), float(w_ref),
                                          k_lead, a_min, a_max, dt)
    return LeaderState(w_new, a_lead)


def ego_step(state: VehicleState, u: float, w_pred: float, dt: float,
             h: float = 0.6) -> VehicleState:
    """One RK4 step of the ego's third-order longitudinal model.

    ``w_pred`` is the true predecessor speed, held over the step; attacks
    never touch this path.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if h <= 0:
        raise ValueError("h must be positive")
    d, w, a = kernels.ego_rk4(float(state.d), float(state.w), float(state.a),
                              float(u), float(w_pred), h, dt)
    return VehicleState(d, w, a)
