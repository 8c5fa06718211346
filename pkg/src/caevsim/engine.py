"""Closed-loop simulation: leader, CACC, BMS, cell, ego, residuals, defender."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as K
from .attacks import AttackSet
from .battery import diffusion_coefficients, initial_battery_state
from .config import ScenarioConfig
from .errors import ConfigError, SimulationError
from .residuals import residual_norm
from .rl.policy import PolicyParameters, act, observe

log = logging.getLogger(__name__)

SATURATION_TOL = 0.05  # m/s^2 from a_min counts as saturated
AXES = {"delta_a_max": "accel_comm", "delta_I_max": "current_sensor"}


class World:
    """Mutable closed-loop state for one run."""

    def __init__(self, cfg: ScenarioConfig, policy: PolicyParameters | None = None,
                 rng: np.random.Generator | None = None, n_rows: int | None = None):
        self.cfg = cfg
        self.policy = policy
        self.rng = rng if rng is not None else np.random.default_rng(cfg.sim.seed)
        bp = cfg.battery
        cycle = cfg.drive_cycle()
        self.cyc_t = cycle.times
        self.cyc_v = cycle.speeds
        self.lo, self.up, self.b_surf = diffusion_coefficients(bp)
        self.ocv = bp.ocv_array
        self.gain_v = cfg.observer.vehicle_gain(cfg.cacc.h)
        self.atk = np.ascontiguousarray(cfg.attacks.table)
        self.par = self._param_vector()
        self.st = self._initial_state(cycle)
        self.n_rows = cfg.n_ticks if n_rows is None else n_rows
        self.rows = np.zeros((self.n_rows, K.N_COL))
        self.n_done = 0
        self.decisions = 0

    def _param_vector(self):
        cfg = self.cfg
        par = np.zeros(K.N_PAR)
        par[K.P_DT] = cfg.sim.dt
        par[K.P_KLEAD] = cfg.platoon.k_lead
        par[K.P_AMIN] = cfg.platoon.a_min
        par[K.P_AMAX] = cfg.platoon.a_max
        par[K.P_H] = cfg.cacc.h
        par[K.P_KP] = cfg.cacc.k_p
        par[K.P_KD] = cfg.cacc.k_d
        par[K.P_DR] = cfg.cacc.d_r
        par[K.P_KAPPA] = cfg.battery.kappa
        par[K.P_KB] = cfg.battery.K_b
        par[K.P_R0] = cfg.battery.R0
        par[K.P_GAMMA] = cfg.battery.gamma_b
        par[K.P_DRSHELL] = cfg.battery.shell_width
        par[K.P_CMAX] = cfg.battery.c_max
        par[K.P_TAUF] = cfg.observer.filter_tau
        par[K.P_MB] = cfg.observer.M_b
        par[K.P_IDEAL] = 1.0 if cfg.battery.ideal_actuator else 0.0
        par[K.P_NSHELL] = cfg.battery.n_shells
        return par

    def _initial_state(self, cycle):
        cfg = self.cfg
        n = cfg.battery.n_shells
        st = np.zeros(K.state_size(n))
        w0 = float(cycle.speeds[0])
        bat = initial_battery_state(cfg.battery)
        st[K.S_WL] = w0
        st[K.S_D] = cfg.cacc.d_r + cfg.cacc.h * w0 + cfg.sim.initial_gap_offset
        st[K.S_W] = w0
        st[K.S_A] = 0.0
        st[K.S_I] = 0.0
        st[K.S_V] = bat.V
        st[K.S_Z] = w0
        st[K.S_XD] = st[K.S_D]
        st[K.S_XW] = w0
        st[K.S_VHAT] = bat.V
        st[K.S_C0:K.S_C0 + n] = bat.c
        st[K.S_C0 + n:K.S_C0 + 2 * n] = bat.c
        return st

    # -- read-outs ---------------------------------------------------------
    @property
    def tick(self) -> int:
        return int(self.st[K.S_TICK])

    @property
    def t(self) -> float:
        return float(self.st[K.S_T])

    @property
    def tracking_error(self) -> float:
        c = self.cfg.cacc
        return float(self.st[K.S_D] - c.h * self.st[K.S_W] - c.d_r)

    @property
    def tracking_error_rate(self) -> float:
        return float(self.st[K.S_WL] - self.st[K.S_W] - self.cfg.cacc.h * self.st[K.S_A])

    @property
    def r_v(self) -> np.ndarray:
        return self.st[[K.S_D, K.S_W, K.S_A]] - self.st[[K.S_XD, K.S_XW, K.S_XA]]

    @property
    def r_b(self) -> float:
        if self.cfg.battery.ideal_actuator:
            return 0.0
        return float(self.st[K.S_V] - self.st[K.S_VHAT])

    @property
    def residual_norm(self) -> float:
        return residual_norm(self.r_v, self.cfg.observer.residual_norm)

    @property
    def residual_active(self) -> bool:
        if not self.cfg.defender.gating:
            return True
        obs = self.cfg.observer
        return self.residual_norm > obs.theta_v or abs(self.r_b) > obs.theta_b

    def observation(self) -> np.ndarray:
        scale = self.policy.obs_scale if self.policy is not None else None
        if scale is None:
            return observe(self.tracking_error, self.residual_norm)
        return observe(self.tracking_error, self.residual_norm, scale)

    @property
    def u_rl(self) -> float:
        return float(self.st[K.S_URL])

    def set_u_rl(self, value: float) -> None:
        self.st[K.S_URL] = value

    @property
    def clamp_events(self) -> int:
        return int(self.st[K.S_CLAMP])

    # -- stepping ----------------------------------------------------------
    def defender_decision(self) -> float:
        cfg = self.cfg
        if not cfg.defender.enabled or self.policy is None:
            u = 0.0
        else:
            u = act(self.policy, self.observation(), cfg.defender.mode,
                    self.residual_active, self.rng)
        self.st[K.S_URL] = u
        self.decisions += 1
        return u

    def advance(self, n_ticks: int) -> int:
        """Advance up to ``n_ticks`` physics ticks with the held u_RL."""
        n_ticks = min(n_ticks, self.n_rows - self.n_done)
        if n_ticks <= 0:
            return 0
        done = K.advance(self.st, self.par, self.ocv, self.lo, self.up, self.b_surf,
                         self.gain_v, self.cyc_t, self.cyc_v, self.atk, n_ticks,
                         self.rows, self.n_done)
        self.n_done += done
        if done < n_ticks:
            raise SimulationError(
                f"non-finite state at trace row {self.n_done} (t = {self.n_done * self.cfg.sim.dt:.2f} s)",
                row=self.n_done)
        return done

    def last_row(self) -> np.ndarray:
        return self.rows[self.n_done - 1]


def step(world: World) -> World:
    """One physics tick, taking a defender decision on decision ticks."""
    if world.tick % world.cfg.defender.decision_ticks == 0:
        world.defender_decision()
    world.advance(1)
    return world


@dataclass
class SimTrace:
    records: np.ndarray
    summary: dict = field(default_factory=dict)
    columns: tuple = K.TRACE_COLUMNS

    def column(self, name: str) -> np.ndarray:
        return self.records[:, self.columns.index(name)]

    def __getitem__(self, name):
        return self.column(name)

    def __len__(self):
        return self.records.shape[0]

    def write(self, out_dir, force: bool = False) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trace_path = out / "trace.csv"
        summary_path = out / "summary.json"
        for p in (trace_path, summary_path):
            if p.exists() and not force:
                raise FileExistsError(f"{p} exists; pass --force to overwrite")
        with trace_path.open("w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(self.columns) + "\n")
            np.savetxt(fh, self.records, fmt="%.9g", delimiter=",")
        summary_path.write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")
        return out

    @classmethod
    def read(cls, in_dir) -> "SimTrace":
        d = Path(in_dir)
        trace_path = d / "trace.csv"
        if not trace_path.exists():
            raise FileNotFoundError(f"no trace.csv in {d}")
        with trace_path.open(encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != K.TRACE_COLUMNS:
                raise ValueError(f"{trace_path}: unexpected header")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        if data.size == 0:
            raise ValueError(f"{trace_path}: trace has no rows")
        if data.shape[1] != len(header):
            raise ValueError(f"{trace_path}: partial trace (column count mismatch)")
        summary = {}
        sp = d / "summary.json"
        if sp.exists():
            summary = json.loads(sp.read_text(encoding="utf-8"))
        return cls(data, summary)


def summarize(records: np.ndarray, cfg: ScenarioConfig) -> dict:
    col = K.TRACE_COLUMNS.index
    t = records[:, col("t")]
    d = records[:, col("d")]
    e = records[:, col("e")]
    u_rl = records[:, col("u_RL")]
    post = t >= cfg.sim.transient
    a_min = cfg.platoon.a_min
    summary = {
        "n_rows": int(records.shape[0]),
        "dt": cfg.sim.dt,
        "t_end": float(t[-1]) if len(t) else 0.0,
        "min_d": float(d.min()),
        "max_abs_e": float(np.abs(e).max()),
        "max_abs_e_post_transient": float(np.abs(e[post]).max()) if post.any() else 0.0,
        "frac_abs_e_le_1_post_transient":
            float(np.mean(np.abs(e[post]) <= 1.0)) if post.any() else 1.0,
        "collision": bool(np.any(d <= 0.0)),
        "unsafe_entry": bool(np.any(d < cfg.cacc.d_r)),
        "saturation_fraction": float(np.mean(u_rl <= a_min + SATURATION_TOL)),
        "max_abs_u_rl": float(np.abs(u_rl).max()),
        "max_r_v_norm": float(records[:, col("r_v_norm")].max()),
        "max_abs_r_b": float(np.abs(records[:, col("r_b")]).max()),
        "return": float(records[:, col("reward")].sum()),
    }
    return summary


def load_policy_for(cfg: ScenarioConfig) -> PolicyParameters | None:
    if not cfg.defender.enabled:
        return None
    path = cfg.policy_path()
    if path is None:
        raise ConfigError("defender.policy: required when defender.enabled is true",
                          [("defender.policy", "required when the defender is enabled")])
    from .rl.checkpoint import load_policy

    return load_policy(path)


def run(cfg: ScenarioConfig, policy: PolicyParameters | None = None) -> SimTrace:
    """Simulate ``cfg.sim.duration`` seconds; deterministic for a given seed."""
    if policy is None and cfg.defender.enabled:
        policy = load_policy_for(cfg)
    world = World(cfg, policy)
    block = cfg.defender.decision_ticks
    while world.n_done < world.n_rows:
        world.defender_decision()
        world.advance(block)
    if world.clamp_events:
        log.warning("battery concentrations were clamped %d times", world.clamp_events)
    summary = summarize(world.rows, cfg)
    summary["clamp_events"] = world.clamp_events
    summary["config_hash"] = cfg.config_hash()
    summary["defender_enabled"] = bool(cfg.defender.enabled and policy is not None)
    return SimTrace(world.rows, summary)


# -- sweeps ------------------------------------------------------------------

@dataclass
class SweepReport:
    axis: str
    values: list
    min_d: list
    unsafe_entry: list
    saturation_fraction: list
    errors: list
    traces: list = field(default_factory=list, repr=False)

    @property
    def boundary(self):
        """Largest swept value whose run never entered the unsafe region."""
        safe = [v for v, u, err in zip(self.values, self.unsafe_entry, self.errors)
                if err is None and not u]
        return max(safe) if safe else None

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "values": list(self.values),
            "min_d": list(self.min_d),
            "unsafe_entry": list(self.unsafe_entry),
            "saturation_fraction": list(self.saturation_fraction),
            "errors": list(self.errors),
            "boundary": self.boundary,
        }

    def write(self, out_dir, force: bool = False) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "sweep.csv"
        json_path = out / "sweep.json"
        for p in (csv_path, json_path):
            if p.exists() and not force:
                raise FileExistsError(f"{p} exists; pass --force to overwrite")
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "min_d", "unsafe_entry", "saturation_fraction"])
            for row in zip(self.values, self.min_d, self.unsafe_entry,
                           self.saturation_fraction):
                w.writerow([f"{row[0]:.9g}", f"{row[1]:.9g}", int(bool(row[2])),
                            f"{row[3]:.9g}"])
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        for value, trace in zip(self.values, self.traces):
            if trace is not None:
                trace.write(out / f"run_{value:g}", force=force)
        return out


def sweep_config(base: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    """Base scenario with the swept target's magnitude set to ``value``.

    Values are magnitudes; the sign of the base profile is kept, so a base
    current attack of -2 A swept over 5..50 gives -5..-50 A.
    """
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(AXES)}")
    target = AXES[axis]
    sign = 1.0
    for p in base.attacks.profiles:
        if p.target == target and p.magnitude != 0:
            sign = math.copysign(1.0, p.magnitude)
            break
    attacks: AttackSet = base.attacks.with_magnitude(target, sign * abs(float(value)))
    return base.replace(attacks=attacks)


def _sweep_one(args):
    cfg, policy, keep = args
    try:
        trace = run(cfg, policy)
        return trace.summary, (trace if keep else None), None
    except (SimulationError, ConfigError) as exc:
        return None, None, str(exc)


def sweep(base: ScenarioConfig, axis: str, values, policy: PolicyParameters | None = None,
          jobs: int = 1, keep_traces: bool = False) -> SweepReport:
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value")
    if policy is None and base.defender.enabled:
        policy = load_policy_for(base)
    tasks = [(sweep_config(base, axis, v), policy, keep_traces) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    report = SweepReport(axis, values, [], [], [], [])
    for value, (summary, trace, err) in zip(values, results):
        if err is not None:
            log.error("sweep %s=%g failed: %s", axis, value, err)
            report.min_d.append(float("nan"))
            report.unsafe_entry.append(True)
            report.saturation_fraction.append(float("nan"))
        else:
            report.min_d.append(summary["min_d"])
            report.unsafe_entry.append(summary["unsafe_entry"])
            report.saturation_fraction.append(summary["saturation_fraction"])
        report.errors.append(err)
        report.traces.append(trace)
    return report
