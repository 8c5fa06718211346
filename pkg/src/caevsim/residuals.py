"""Observer-based residual generators for the vehicle and the battery.

The vehicle estimator is driven by an input the ego reconstructs from its
own sensors (range, range-rate, speed, acceleration), so a falsified
communicated acceleration shows up as a persistent residual. The battery
estimator runs a copy of the cell model on the current the BMS would
circulate without a sensor attack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import kernels
from .battery import BatteryParams, diffusion_coefficients
from .cacc import CaccGains
from .errors import ConfigError
from .platoon import VehicleState


@dataclass(frozen=True)
class ObserverConfig:
    poles_v: tuple = (-2.0, -2.5, -3.0)
    M_b: float = 0.2
    theta_v: float = 0.05
    theta_b: float = 0.005
    filter_tau: float = 0.1
    residual_norm: str = "euclidean"

    def __post_init__(self):
        problems = []
        poles = np.asarray(self.poles_v, dtype=complex)
        if poles.shape != (3,):
            problems.append(("observer.poles_v", "need exactly three poles"))
        elif np.any(poles.real >= 0):
            problems.append(("observer.poles_v", "poles must have negative real part"))
        if not self.M_b > 0:
            problems.append(("observer.M_b", "must be positive"))
        if not self.theta_v > 0:
            problems.append(("observer.theta_v", "must be positive"))
        if not self.theta_b > 0:
            problems.append(("observer.theta_b", "must be positive"))
        if not self.filter_tau > 0:
            problems.append(("observer.filter_tau", "must be positive"))
        if self.residual_norm not in ("euclidean", "component-wise"):
            problems.append(("observer.residual_norm",
                             "must be 'euclidean' or 'component-wise'"))
        if problems:
            raise ConfigError("; ".join(f"{p}: {m}" for p, m in problems), problems)
        object.__setattr__(self, "poles_v", tuple(self.poles_v))

    def vehicle_gain(self, h: float) -> np.ndarray:
        return place_observer_gain(vehicle_matrices(h)[0], self.poles_v)


@dataclass(frozen=True)
class InputEstimate:
    """Attack-free reconstruction of the predecessor and the ego's input."""

    w_pred: float
    a_pred: float
    u_req: float
    u: float


@dataclass
class ResidualState:
    x_hat_v: np.ndarray
    r_v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x_hat_b: np.ndarray | None = None
    r_b: float = 0.0
    filter_state: float = 0.0
    V_hat: float = 0.0


def vehicle_matrices(h: float):
    """State matrix of (d, w, a) and input matrix for (w_pred, u)."""
    A = np.array([[0.0, -1.0, 0.0],
                  [0.0, 0.0, 1.0],
                  [0.0, 0.0, -1.0 / h]])
    B = np.array([[1.0, 0.0],
                  [0.0, 0.0],
                  [0.0, 1.0 / h]])
    return A, B


def residual_norm(r, kind: str = "euclidean") -> float:
    r = np.asarray(r, dtype=float)
    if kind == "component-wise":
        return float(np.max(np.abs(r)))
    return float(np.sqrt(np.sum(r * r)))


def _real_block_form(poles):
    """Real matrix whose eigenvalues are ``poles`` (conjugate pairs as 2x2 blocks)."""
    poles = list(poles)
    n = len(poles)
    S = np.zeros((n, n))
    i = 0
    used = [False] * n
    row = 0
    for i, p in enumerate(poles):
        if used[i]:
            continue
        used[i] = True
        if abs(p.imag) < 1e-12:
            S[row, row] = p.real
            row += 1
            continue
        for j in range(i + 1, n):
            if not used[j] and abs(poles[j] - np.conj(p)) < 1e-9 * max(1.0, abs(p)):
                used[j] = True
                break
        else:
            raise ConfigError("complex poles must come in conjugate pairs")
        S[row:row + 2, row:row + 2] = [[p.real, abs(p.imag)], [-abs(p.imag), p.real]]
        row += 2
    return S


def place_observer_gain(A, poles, C=None) -> np.ndarray:
    """Gain ``M`` with eig(A - M C) equal to ``poles``.

    With full-state measurement (``C`` omitted or invertible) the closed
    error matrix is built directly. When ``A`` is diagonalisable with real
    spectrum it keeps A's eigenvectors, so requesting eig(A) returns M = 0.
    Other output matrices go through scipy's pole placement on the dual pair.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigError("A must be square")
    poles = np.asarray(poles, dtype=complex).ravel()
    if poles.size != n:
        raise ConfigError(f"need {n} poles, got {poles.size}")
    if np.any(poles.real >= 0):
        raise ConfigError("requested poles must have negative real part")
    for i in range(n):
        for j in range(i + 1, n):
            if abs(poles[i] - poles[j]) <= 1e-9 * max(1.0, abs(poles[i])):
                raise ConfigError("requested poles must be distinct")

    C = np.eye(n) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != n:
        raise ConfigError("C must have as many columns as A")
    obs = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(n)])
    if np.linalg.matrix_rank(obs) < n:
        raise ConfigError("(A, C) is not observable")

    if C.shape[0] == n and np.linalg.matrix_rank(C) == n:
        S = None
        eigvals, eigvecs = np.linalg.eig(A)
        if (np.all(np.abs(eigvals.imag) < 1e-12) and np.all(np.abs(poles.imag) < 1e-12)
                and np.linalg.cond(eigvecs) < 1e8):
            order = np.argsort(eigvals.real)
            vecs = eigvecs[:, order].real
            target = np.sort(poles.real)
            S = vecs @ np.diag(target) @ np.linalg.inv(vecs)
        if S is None:
            S = _real_block_form(poles)
        return (A - S) @ np.linalg.inv(C)

    res = signal.place_poles(A.T, C.T, poles)
    return np.asarray(res.gain_matrix).T


def local_input_estimate(state: VehicleState, range_rate: float, filter_state: float,
                         gains: CaccGains, filter_tau: float = 0.1,
                         V_meas: float | None = None, K_b: float = 0.1,
                         u_rl: float = 0.0) -> InputEstimate:
    """Rebuild the predecessor motion and the ego input from local sensors.

    The predecessor speed is the ego speed plus range-rate. Its acceleration
    comes from a first-order low-pass differentiator whose state is
    ``filter_state``. The defender's own command ``u_rl`` is known locally and
    is included, so the residual keeps reporting an attack that the defender
    has already cancelled. When ``V_meas`` is given the estimate of the
    delivered input includes the static gain of the proportional current loop.
    """
    w_pred = state.w + range_rate
    a_pred = (w_pred - filter_state) / filter_tau
    u_req = gains.k_p * (state.d - gains.h * state.w - gains.d_r) \
        + gains.k_d * (range_rate - gains.h * state.a) + a_pred + u_rl
    if V_meas is None:
        u = u_req
    else:
        u = V_meas * K_b * u_req / (1.0 + K_b * V_meas)
    return InputEstimate(w_pred, a_pred, u_req, u)


def advance_filter(filter_state: float, w_pred: float, tau: float, dt: float) -> float:
    return w_pred + (filter_state - w_pred) * math.exp(-dt / tau)


def vehicle_observer_step(res: ResidualState, x_meas: VehicleState, u_hat: InputEstimate,
                          gain: np.ndarray, h: float, dt: float,
                          x_prev: VehicleState | None = None) -> ResidualState:
    """Advance the vehicle estimator one RK4 step and refresh r_v.

    The measurement is interpolated linearly from ``x_prev`` to ``x_meas``
    over the step (held at ``x_meas`` when ``x_prev`` is omitted).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    xh = np.array(res.x_hat_v, dtype=float)
    x_new = x_meas.as_array()
    x_old = x_new if x_prev is None else x_prev.as_array()
    kernels.vehicle_observer_rk4(xh, x_old, x_new, float(u_hat.w_pred), float(u_hat.u),
                                 np.asarray(gain, dtype=float), h, dt)
    return ResidualState(x_hat_v=xh, r_v=x_new - xh, x_hat_b=res.x_hat_b, r_b=res.r_b,
                         filter_state=res.filter_state, V_hat=res.V_hat)


def clean_current(P_req: float, V_meas: float, K_b: float) -> float:
    """Fixed point of the current loop without a sensor attack."""
    return K_b * P_req / (1.0 + K_b * V_meas)


def battery_observer_step(res: ResidualState, V_meas: float, P_req: float, V_prev: float,
                          params: BatteryParams, cfg: ObserverConfig,
                          dt: float) -> ResidualState:
    """Advance the battery estimator with voltage-innovation injection.

    ``V_prev`` is the voltage the BMS used this step; ``V_meas`` the fresh
    terminal reading the residual is formed against.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    i_hat = clean_current(P_req, V_prev, params.K_b)
    lo, up, b_surf = diffusion_coefficients(params)
    c = np.array(res.x_hat_b, dtype=float)
    kernels.battery_observer_rk4(c, i_hat, float(V_meas), lo, up, b_surf, params.ocv_array,
                                 params.c_max, params.R0, params.gamma_b,
                                 params.shell_width, cfg.M_b, dt)
    cs = kernels.surface_concentration(c, i_hat, params.gamma_b, params.shell_width)
    v_hat = kernels.terminal_voltage(cs, i_hat, params.ocv_array, params.c_max, params.R0)
    return ResidualState(x_hat_v=res.x_hat_v, r_v=res.r_v, x_hat_b=c,
                         r_b=float(V_meas - v_hat), filter_state=res.filter_state,
                         V_hat=float(v_hat))
