"""Hot numeric kernels for the closed loop.

Everything here takes flat float64 arrays and scalars so the same source can
be compiled by numba or run as plain numpy (see ``_accel``). The layout
constants below are the contract between these kernels and ``engine``.
"""

import math

import numpy as np

from ._accel import jit

# parameter vector
P_DT = 0
P_KLEAD = 1
P_AMIN = 2
P_AMAX = 3
P_H = 4
P_KP = 5
P_KD = 6
P_DR = 7
P_KAPPA = 8
P_KB = 9
P_R0 = 10
P_GAMMA = 11
P_DRSHELL = 12
P_CMAX = 13
P_TAUF = 14
P_MB = 15
P_IDEAL = 16
P_NSHELL = 17
N_PAR = 18

# state vector
S_T = 0
S_WL = 1
S_AL = 2
S_D = 3
S_W = 4
S_A = 5
S_I = 6
S_V = 7
S_URL = 8
S_Z = 9
S_XD = 10
S_XW = 11
S_XA = 12
S_VHAT = 13
S_TICK = 14
S_CLAMP = 15
S_C0 = 16

# trace row
TRACE_COLUMNS = (
    "t", "d", "w", "a", "e", "u_req", "P_req", "I", "V", "c_surf", "P", "u",
    "u_RL", "r_v_d", "r_v_w", "r_v_a", "r_v_norm", "r_b", "delta_a",
    "delta_I", "reward",
)
N_COL = len(TRACE_COLUMNS)

# attack table columns
A_TARGET = 0
A_SHAPE = 1
A_MAG = 2
A_T0 = 3
A_T1 = 4
A_FREQ = 5
A_SLOPE = 6
A_DUTY = 7
N_ACOL = 8

TARGET_ACCEL = 0
TARGET_CURRENT = 1
SHAPE_STEP = 0
SHAPE_RAMP = 1
SHAPE_PULSE = 2
SHAPE_SINE = 3


def state_size(n_shells):
    return S_C0 + 2 * n_shells


@jit
def clamp(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@jit
def reward_value(e):
    if abs(e) <= 1.0:
        return 10.0
    return -1000.0


@jit
def polyval_asc(coeffs, x):
    # coeffs[0] + coeffs[1] x + ...
    acc = 0.0
    for k in range(coeffs.shape[0] - 1, -1, -1):
        acc = acc * x + coeffs[k]
    return acc


@jit
def polyder_asc(coeffs, x):
    acc = 0.0
    for k in range(coeffs.shape[0] - 1, 0, -1):
        acc = acc * x + k * coeffs[k]
    return acc


@jit
def eval_attacks(atk, t):
    delta_a = 0.0
    delta_i = 0.0
    for j in range(atk.shape[0]):
        t0 = atk[j, A_T0]
        t1 = atk[j, A_T1]
        if t < t0 or t >= t1:
            continue
        mag = atk[j, A_MAG]
        shape = int(atk[j, A_SHAPE])
        tau = t - t0
        if shape == SHAPE_STEP:
            val = mag
        elif shape == SHAPE_RAMP:
            slope = atk[j, A_SLOPE]
            if slope > 0.0:
                ramp_time = abs(mag) / slope
            else:
                ramp_time = t1 - t0
            if ramp_time <= 0.0:
                val = mag
            else:
                val = mag * min(1.0, tau / ramp_time)
        elif shape == SHAPE_PULSE:
            period = 1.0 / atk[j, A_FREQ]
            phase = tau - period * math.floor(tau / period)
            val = mag if phase < atk[j, A_DUTY] * period else 0.0
        else:
            val = mag * math.sin(2.0 * math.pi * atk[j, A_FREQ] * tau)
        if int(atk[j, A_TARGET]) == TARGET_ACCEL:
            delta_a += val
        else:
            delta_i += val
    return delta_a, delta_i


@jit
def leader_update(w_lead, w_ref, k_lead, a_min, a_max, dt):
    a_lead = clamp(k_lead * (w_ref - w_lead), a_min, a_max)
    w_new = w_lead + a_lead * dt
    if w_new < 0.0:
        w_new = 0.0
    return w_new, a_lead


@jit
def ego_rk4(d, w, a, u, w_pred, h, dt):
    # d' = w_pred - w, w' = a, a' = (u - a) / h
    k1d = w_pred - w
    k1w = a
    k1a = (u - a) / h
    w2 = w + 0.5 * dt * k1w
    a2 = a + 0.5 * dt * k1a
    k2d = w_pred - w2
    k2w = a2
    k2a = (u - a2) / h
    w3 = w + 0.5 * dt * k2w
    a3 = a + 0.5 * dt * k2a
    k3d = w_pred - w3
    k3w = a3
    k3a = (u - a3) / h
    w4 = w + dt * k3w
    a4 = a + dt * k3a
    k4d = w_pred - w4
    k4w = a4
    k4a = (u - a4) / h
    d_new = d + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
    w_new = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    a_new = a + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
    if w_new < 0.0:
        w_new = 0.0
    return d_new, w_new, a_new


@jit
def diffusion_rhs(c, current, lo, up, b_surf, out):
    # Tridiagonal finite-volume operator; lo[0] and up[n-1] are zero.
    n = c.shape[0]
    for k in range(n):
        acc = 0.0
        if k > 0:
            acc += lo[k] * (c[k - 1] - c[k])
        if k < n - 1:
            acc += up[k] * (c[k + 1] - c[k])
        out[k] = acc
    out[n - 1] += b_surf * current


@jit
def surface_concentration(c, current, gamma_b, dr_shell):
    # half-cell extrapolation using the flux boundary condition
    return c[c.shape[0] - 1] - 0.5 * dr_shell * gamma_b * current


@jit
def battery_rk4(c, current, lo, up, b_surf, dt):
    n = c.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    diffusion_rhs(c, current, lo, up, b_surf, k1)
    for k in range(n):
        tmp[k] = c[k] + 0.5 * dt * k1[k]
    diffusion_rhs(tmp, current, lo, up, b_surf, k2)
    for k in range(n):
        tmp[k] = c[k] + 0.5 * dt * k2[k]
    diffusion_rhs(tmp, current, lo, up, b_surf, k3)
    for k in range(n):
        tmp[k] = c[k] + dt * k3[k]
    diffusion_rhs(tmp, current, lo, up, b_surf, k4)
    for k in range(n):
        c[k] = c[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])


@jit
def clamp_concentration(c, c_max):
    hits = 0
    for k in range(c.shape[0]):
        if c[k] < 0.0:
            c[k] = 0.0
            hits += 1
        elif c[k] > c_max:
            c[k] = c_max
            hits += 1
    return hits


@jit
def terminal_voltage(c_surf, current, ocv, c_max, r0):
    return polyval_asc(ocv, c_surf / c_max) - r0 * current


@jit
def battery_observer_rhs(c, current, v_meas, lo, up, b_surf, ocv, c_max, r0,
                         gamma_b, dr_shell, gain, out):
    diffusion_rhs(c, current, lo, up, b_surf, out)
    cs = surface_concentration(c, current, gamma_b, dr_shell)
    innov = v_meas - terminal_voltage(cs, current, ocv, c_max, r0)
    slope = polyder_asc(ocv, cs / c_max) / c_max
    if abs(slope) < 1e-12:
        slope = 1e-12
    inj = gain * innov / slope
    for k in range(c.shape[0]):
        out[k] += inj


@jit
def battery_observer_rk4(c, current, v_meas, lo, up, b_surf, ocv, c_max, r0,
                         gamma_b, dr_shell, gain, dt):
    n = c.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    battery_observer_rhs(c, current, v_meas, lo, up, b_surf, ocv, c_max, r0,
                         gamma_b, dr_shell, gain, k1)
    for k in range(n):
        tmp[k] = c[k] + 0.5 * dt * k1[k]
    battery_observer_rhs(tmp, current, v_meas, lo, up, b_surf, ocv, c_max, r0,
                         gamma_b, dr_shell, gain, k2)
    for k in range(n):
        tmp[k] = c[k] + 0.5 * dt * k2[k]
    battery_observer_rhs(tmp, current, v_meas, lo, up, b_surf, ocv, c_max, r0,
                         gamma_b, dr_shell, gain, k3)
    for k in range(n):
        tmp[k] = c[k] + dt * k3[k]
    battery_observer_rhs(tmp, current, v_meas, lo, up, b_surf, ocv, c_max, r0,
                         gamma_b, dr_shell, gain, k4)
    for k in range(n):
        c[k] = c[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])


@jit
def _observer_rhs(xh, xm, wp_hat, u_hat, gain, h, out):
    ed = xm[0] - xh[0]
    ew = xm[1] - xh[1]
    ea = xm[2] - xh[2]
    out[0] = wp_hat - xh[1] + gain[0, 0] * ed + gain[0, 1] * ew + gain[0, 2] * ea
    out[1] = xh[2] + gain[1, 0] * ed + gain[1, 1] * ew + gain[1, 2] * ea
    out[2] = (u_hat - xh[2]) / h + gain[2, 0] * ed + gain[2, 1] * ew + gain[2, 2] * ea


@jit
def vehicle_observer_rk4(xh, x_old, x_new, wp_hat, u_hat, gain, h, dt):
    # measurement interpolated linearly across the tick
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    tmp = np.empty(3)
    xm = np.empty(3)
    for i in range(3):
        xm[i] = x_old[i]
    _observer_rhs(xh, xm, wp_hat, u_hat, gain, h, k1)
    for i in range(3):
        xm[i] = 0.5 * (x_old[i] + x_new[i])
        tmp[i] = xh[i] + 0.5 * dt * k1[i]
    _observer_rhs(tmp, xm, wp_hat, u_hat, gain, h, k2)
    for i in range(3):
        tmp[i] = xh[i] + 0.5 * dt * k2[i]
    _observer_rhs(tmp, xm, wp_hat, u_hat, gain, h, k3)
    for i in range(3):
        xm[i] = x_new[i]
        tmp[i] = xh[i] + dt * k3[i]
    _observer_rhs(tmp, xm, wp_hat, u_hat, gain, h, k4)
    for i in range(3):
        xh[i] = xh[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@jit
def advance(st, par, ocv, lo, up, b_surf, gain_v, cyc_t, cyc_v, atk,
            n_ticks, out, row0):
    """Run ``n_ticks`` closed-loop ticks in place, writing trace rows.

    Returns the number of ticks completed; a value below ``n_ticks``
    means the state went non-finite on the following tick.
    """
    dt = par[P_DT]
    h = par[P_H]
    kp = par[P_KP]
    kd = par[P_KD]
    d_r = par[P_DR]
    kappa = par[P_KAPPA]
    k_b = par[P_KB]
    r0 = par[P_R0]
    gamma_b = par[P_GAMMA]
    dr_shell = par[P_DRSHELL]
    c_max = par[P_CMAX]
    tau_f = par[P_TAUF]
    m_b = par[P_MB]
    ideal = par[P_IDEAL] > 0.5
    n = int(par[P_NSHELL])
    c = st[S_C0:S_C0 + n]
    chat = st[S_C0 + n:S_C0 + 2 * n]
    decay = math.exp(-dt / tau_f)
    x_old = np.empty(3)
    x_new = np.empty(3)
    xh = np.empty(3)

    for k in range(n_ticks):
        tick = st[S_TICK]
        t = tick * dt
        w_ref = np.interp(t, cyc_t, cyc_v)
        w_lead, a_lead = leader_update(st[S_WL], w_ref, par[P_KLEAD],
                                       par[P_AMIN], par[P_AMAX], dt)
        st[S_WL] = w_lead
        st[S_AL] = a_lead

        d = st[S_D]
        w = st[S_W]
        a = st[S_A]
        e = d - h * w - d_r
        e_dot = (w_lead - w) - h * a
        delta_a, delta_i = eval_attacks(atk, t)
        u_req = kp * e + kd * e_dot + a_lead + delta_a
        u_rl = st[S_URL]
        v_prev = st[S_V]
        p_req = kappa * (u_req + u_rl)

        if ideal:
            current = 0.0
            volt = v_prev
            power = p_req
            u = u_req + u_rl
            c_surf = surface_concentration(c, 0.0, gamma_b, dr_shell)
        else:
            current = k_b * (p_req - v_prev * (st[S_I] + delta_i))
            battery_rk4(c, current, lo, up, b_surf, dt)
            st[S_CLAMP] += clamp_concentration(c, c_max)
            c_surf = surface_concentration(c, current, gamma_b, dr_shell)
            volt = terminal_voltage(c_surf, current, ocv, c_max, r0)
            power = volt * current
            u = power / kappa

        # locally reconstructed, attack-free input
        range_rate = w_lead - w
        wp_hat = w + range_rate
        ap_hat = (wp_hat - st[S_Z]) / tau_f
        u_req_hat = kp * e + kd * (range_rate - h * a) + ap_hat + u_rl
        if ideal:
            u_hat = u_req_hat
        else:
            u_hat = v_prev * k_b * u_req_hat / (1.0 + k_b * v_prev)

        x_old[0] = d
        x_old[1] = w
        x_old[2] = a
        d, w, a = ego_rk4(d, w, a, u, w_lead, h, dt)
        st[S_D] = d
        st[S_W] = w
        st[S_A] = a
        x_new[0] = d
        x_new[1] = w
        x_new[2] = a

        xh[0] = st[S_XD]
        xh[1] = st[S_XW]
        xh[2] = st[S_XA]
        vehicle_observer_rk4(xh, x_old, x_new, wp_hat, u_hat, gain_v, h, dt)
        st[S_XD] = xh[0]
        st[S_XW] = xh[1]
        st[S_XA] = xh[2]
        st[S_Z] = wp_hat + (st[S_Z] - wp_hat) * decay

        if ideal:
            r_b = 0.0
        else:
            i_hat = k_b * p_req / (1.0 + k_b * v_prev)
            battery_observer_rk4(chat, i_hat, volt, lo, up, b_surf, ocv, c_max,
                                 r0, gamma_b, dr_shell, m_b, dt)
            cs_hat = surface_concentration(chat, i_hat, gamma_b, dr_shell)
            st[S_VHAT] = terminal_voltage(cs_hat, i_hat, ocv, c_max, r0)
            r_b = volt - st[S_VHAT]

        st[S_I] = current
        st[S_V] = volt
        st[S_TICK] = tick + 1.0
        st[S_T] = (tick + 1.0) * dt

        rd = d - xh[0]
        rw = w - xh[1]
        ra = a - xh[2]
        e_post = d - h * w - d_r
        row = out[row0 + k]
        row[0] = st[S_T]
        row[1] = d
        row[2] = w
        row[3] = a
        row[4] = e_post
        row[5] = u_req
        row[6] = p_req
        row[7] = current
        row[8] = volt
        row[9] = c_surf
        row[10] = power
        row[11] = u
        row[12] = u_rl
        row[13] = rd
        row[14] = rw
        row[15] = ra
        row[16] = math.sqrt(rd * rd + rw * rw + ra * ra)
        row[17] = r_b
        row[18] = delta_a
        row[19] = delta_i
        row[20] = reward_value(e_post)

        for j in range(N_COL):
            if not np.isfinite(row[j]):
                return k
    return n_ticks
