"""Single-particle anode model, BMS current loop and the u/P, P/u converters.

Sign convention: positive current is discharge and drains the anode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError

log = logging.getLogger(__name__)

FARADAY = 96485.33212

# Graphite-anode cell of roughly 2.5 Ah; gamma_b = 1 / (F * S_total * D).
DEFAULT_OCV = (2.85, 1.2, -1.5, 1.2, -0.2)


@dataclass(frozen=True)
class BatteryParams:
    n_shells: int = 10
    D: float = 3.9e-14
    r_a: float = 5.0e-6
    gamma_b: float = 1.45e8
    ocv_coeffs: tuple = DEFAULT_OCV
    R0: float = 0.05
    K_b: float = 0.1
    kappa: float = 10.0
    c_max: float = 30555.0
    initial_stoichiometry: float = 0.5
    ideal_actuator: bool = False

    def __post_init__(self):
        problems = []
        if int(self.n_shells) != self.n_shells or self.n_shells < 3:
            problems.append(("battery.n_shells", "must be an integer >= 3"))
        for name in ("D", "r_a", "c_max", "R0", "K_b", "kappa", "gamma_b"):
            if not getattr(self, name) > 0:
                problems.append((f"battery.{name}", "must be positive"))
        if len(self.ocv_coeffs) < 2:
            problems.append(("battery.ocv_coeffs", "need at least two coefficients"))
        if not 0.0 <= self.initial_stoichiometry <= 1.0:
            problems.append(("battery.initial_stoichiometry", "must lie in [0, 1]"))
        if problems:
            raise ConfigError("; ".join(f"{p}: {m}" for p, m in problems), problems)
        object.__setattr__(self, "n_shells", int(self.n_shells))
        object.__setattr__(self, "ocv_coeffs", tuple(float(c) for c in self.ocv_coeffs))

    @property
    def shell_width(self) -> float:
        return self.r_a / self.n_shells

    @property
    def ocv_array(self) -> np.ndarray:
        return np.asarray(self.ocv_coeffs, dtype=float)


@dataclass(frozen=True)
class BatteryState:
    c: np.ndarray
    I: float = 0.0
    V: float = 0.0
    P_f_prev: float = 0.0
    clamp_events: int = field(default=0, compare=False)


def shell_geometry(params: BatteryParams):
    n = params.n_shells
    dr = params.shell_width
    faces = dr * np.arange(n + 1)
    volumes = 4.0 / 3.0 * np.pi * (faces[1:] ** 3 - faces[:-1] ** 3)
    areas = 4.0 * np.pi * faces ** 2
    return faces, volumes, areas


def diffusion_coefficients(params: BatteryParams):
    """Tridiagonal finite-volume coefficients (lo, up, b_surf) for the kernels."""
    n = params.n_shells
    dr = params.shell_width
    _, vol, area = shell_geometry(params)
    lo = np.zeros(n)
    up = np.zeros(n)
    for k in range(n - 1):
        g = params.D * area[k + 1] / dr
        up[k] = g / vol[k]
        lo[k + 1] = g / vol[k + 1]
    b_surf = -params.D * params.gamma_b * area[n] / vol[n - 1]
    return lo, up, b_surf


def battery_matrices(params: BatteryParams):
    """Dense ``(A_b, B_b)`` of dc/dt = A_b c + B_b I."""
    lo, up, b_surf = diffusion_coefficients(params)
    n = params.n_shells
    A = np.zeros((n, n))
    for k in range(n):
        if k > 0:
            A[k, k - 1] += lo[k]
            A[k, k] -= lo[k]
        if k < n - 1:
            A[k, k + 1] += up[k]
            A[k, k] -= up[k]
    B = np.zeros(n)
    B[-1] = b_surf
    return A, B


def stored_lithium(c, params: BatteryParams) -> float:
    """Moles of lithium in one particle."""
    _, vol, _ = shell_geometry(params)
    return float(np.dot(vol, c))


def surface_concentration(c, current, params: BatteryParams) -> float:
    return float(kernels.surface_concentration(np.asarray(c, dtype=float), float(current),
                                               params.gamma_b, params.shell_width))


def open_circuit_voltage(c_surf, params: BatteryParams):
    return np.polynomial.polynomial.polyval(np.asarray(c_surf) / params.c_max,
                                            params.ocv_array)


def terminal_voltage(c, current, params: BatteryParams) -> float:
    cs = surface_concentration(c, current, params)
    return float(kernels.terminal_voltage(cs, float(current), params.ocv_array,
                                          params.c_max, params.R0))


def initial_battery_state(params: BatteryParams) -> BatteryState:
    c = np.full(params.n_shells, params.initial_stoichiometry * params.c_max)
    return BatteryState(c=c, I=0.0, V=terminal_voltage(c, 0.0, params))


def u_to_power(u_req: float, kappa: float) -> float:
    return kappa * u_req


def power_to_u(P: float, kappa: float) -> float:
    if kappa == 0:
        raise ConfigError("kappa must be non-zero")
    return P / kappa


def feedback_power(V: float, I_meas: float, delta_I: float = 0.0) -> float:
    """Power the BMS believes is flowing, from its voltage and current sensors."""
    return V * (I_meas + delta_I)


def current_command(P_req: float, V: float, I_meas_prev: float, delta_I: float,
                    K_b: float) -> float:
    """Proportional BMS law with the current sensor read one step late."""
    return K_b * (P_req - feedback_power(V, I_meas_prev, delta_I))


def battery_step(state: BatteryState, I: float, params: BatteryParams,
                 dt: float) -> BatteryState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    lo, up, b_surf = diffusion_coefficients(params)
    c = np.array(state.c, dtype=float)
    kernels.battery_rk4(c, float(I), lo, up, b_surf, dt)
    hits = kernels.clamp_concentration(c, params.c_max)
    if hits:
        log.warning("clamped %d shell concentrations to [0, c_max]", hits)
    V = terminal_voltage(c, I, params)
    return BatteryState(c=c, I=float(I), V=V,
                        P_f_prev=feedback_power(state.V, state.I),
                        clamp_events=state.clamp_events + int(hits))


def delivered_power(state: BatteryState) -> float:
    """Actual power out of the cell: terminal voltage times the true current."""
    return state.V * state.I


def with_current(state: BatteryState, I: float) -> BatteryState:
    return replace(state, I=float(I))
