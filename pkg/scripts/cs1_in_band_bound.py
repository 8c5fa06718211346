"""Upper bound on the in-band fraction any defender can reach on case_study_1.

Treats the whole u_RL schedule (one value per decision, 300 of them) as free,
with full knowledge of the attack and no detection delay. The closed loop is
linearised around a schedule, a MILP picks the schedule that minimises the
number of post-transient decision samples with |e| > 1, and the result is
re-simulated. A few passes with a shrinking trust region refine the
linearisation. Takes several minutes.
"""

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from caevsim import load_scenario
from caevsim.config import bundled_scenario_path
from caevsim.engine import World
from caevsim.kernels import TRACE_COLUMNS

CFG = load_scenario(bundled_scenario_path("case_study_1"))
TICKS = CFG.defender.decision_ticks
N = CFG.n_ticks // TICKS
A_MIN, A_MAX = CFG.platoon.a_min, CFG.platoon.a_max
T, D, E = (TRACE_COLUMNS.index(c) for c in ("t", "d", "e"))


def simulate(u):
    w = World(CFG)
    for k in range(N):
        w.set_u_rl(u[k])
        w.advance(TICKS)
    return w.rows


def errors(u):
    return simulate(u)[TICKS - 1::TICKS, E]


def best_schedule(u_lin, radius, post):
    e0 = errors(u_lin)
    jac = np.empty((N, N))
    for k in range(N):
        u = u_lin.copy()
        h = 1.0 if u[k] < A_MAX - 1.0 else -1.0
        u[k] += h
        jac[:, k] = (errors(u) - e0) / h
    m = post.size
    big = 50.0
    rows = jac[post]
    A = np.vstack([np.hstack([rows, -big * np.eye(m)]), np.hstack([-rows, -big * np.eye(m)])])
    ub = np.r_[1.0 - e0[post], 1.0 + e0[post]]
    lo = np.maximum(A_MIN - u_lin, -radius)
    hi = np.minimum(A_MAX - u_lin, radius)
    res = milp(np.r_[np.zeros(N), np.ones(m)], constraints=LinearConstraint(A, -np.inf, ub),
               integrality=np.r_[np.zeros(N), np.ones(m)],
               bounds=Bounds(np.r_[lo, np.zeros(m)], np.r_[hi, np.ones(m)]))
    return u_lin + res.x[:N], 1.0 - res.fun / m


def main():
    t_dec = np.arange(1, N + 1) * CFG.sim.dt * TICKS
    post = np.flatnonzero(t_dec >= CFG.sim.transient)
    u = np.full(N, A_MIN)
    for radius in (A_MAX - A_MIN, 6.0, 3.0, 1.5):
        u, predicted = best_schedule(u, radius, post)
        rows = simulate(u)
        t, e = rows[:, T], rows[:, E]
        frac = np.mean(np.abs(e[t >= CFG.sim.transient]) <= 1.0)
        print(f"radius {radius:5.1f}: predicted {predicted:.3f}, simulated {frac:.3f}, "
              f"min d {rows[:, D].min():.2f} m")


if __name__ == "__main__":
    main()
