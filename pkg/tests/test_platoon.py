import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caevsim.errors import ConfigError
from caevsim.platoon import (DriveCycle, LeaderState, VehicleState, bundled_drive_cycle,
                             ego_step, leader_step, load_drive_cycle_csv, sample_drive_cycle,
                             synthesize_drive_cycle, write_drive_cycle_csv)

H = 0.6


def closed_form(state, u, w_pred, t, h=H):
    """Exact response of (d, w, a) under constant u and predecessor speed."""
    d0, w0, a0 = state.d, state.w, state.a
    ex = math.exp(-t / h)
    a = u + (a0 - u) * ex
    w = w0 + u * t + (a0 - u) * h * (1 - ex)
    # integral of w over [0, t]
    int_w = w0 * t + 0.5 * u * t * t + (a0 - u) * h * (t - h * (1 - ex))
    d = d0 + w_pred * t - int_w
    return np.array([d, w, a])


def integrate(state, u, w_pred, dt, n):
    for _ in range(n):
        state = ego_step(state, u, w_pred, dt, H)
    return state


def test_sample_drive_cycle_interpolates_and_holds():
    cyc = DriveCycle(np.array([0.0, 10.0, 20.0]), np.array([0.0, 10.0, 4.0]))
    assert sample_drive_cycle(cyc, 5.0) == 5.0
    assert sample_drive_cycle(cyc, 15.0) == 7.0
    assert sample_drive_cycle(cyc, 99.0) == 4.0
    with pytest.raises(ValueError):
        sample_drive_cycle(cyc, -0.1)


def test_drive_cycle_csv_round_trip(tmp_path):
    cyc = synthesize_drive_cycle(step=5.0)
    p = tmp_path / "c.csv"
    write_drive_cycle_csv(cyc, p)
    back = load_drive_cycle_csv(p)
    np.testing.assert_allclose(back.speeds, cyc.speeds, rtol=1e-8)  # 9 significant digits
    np.testing.assert_array_equal(back.times, cyc.times)


@pytest.mark.parametrize("text, needle", [
    ("time,speed\n0,1\n", "header"),
    ("t_s,v_mps\n0,1\n0,2\n", "increasing"),
    ("t_s,v_mps\n0,1\n1,abc\n", ":3"),
    ("t_s,v_mps\n", "empty"),
    ("t_s,v_mps\n0,-1\n", "non-negative"),
])
def test_drive_cycle_csv_errors(tmp_path, text, needle):
    p = tmp_path / "bad.csv"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError, match=needle):
        load_drive_cycle_csv(p)


def test_bundled_cycle_is_gentle():
    cyc = bundled_drive_cycle()
    assert cyc.duration == pytest.approx(600.0)
    assert np.max(np.abs(np.diff(cyc.speeds) / np.diff(cyc.times))) < 0.1


def test_leader_respects_limits_and_tracks():
    s = leader_step(LeaderState(0.0), 100.0, 0.01, k_lead=1.0, a_max=2.0)
    assert s.a_lead == 2.0 and s.w_lead == pytest.approx(0.02)
    s = LeaderState(10.0)
    for _ in range(1000):
        s = leader_step(s, 12.0, 0.01)
    # Euler on w' = (12 - w): error decays as (1 - dt)^n
    assert s.w_lead == pytest.approx(12.0 - 2.0 * 0.99 ** 1000, rel=1e-12)


def test_leader_speed_never_negative():
    s = leader_step(LeaderState(0.01), 0.0, 0.1, k_lead=1.0, a_min=-10.0)
    assert s.w_lead >= 0.0


def test_rest_with_zero_inputs_is_fixed_point():
    s = VehicleState(5.0, 0.0, 0.0)
    assert ego_step(s, 0.0, 0.0, 0.01) == s


@pytest.mark.oracle
def test_ego_rk4_against_closed_form():
    s0 = VehicleState(20.0, 12.0, 0.5)
    exact = closed_form(s0, 1.5, 13.0, 10.0)
    got = integrate(s0, 1.5, 13.0, 0.01, 1000).as_array()
    np.testing.assert_allclose(got, exact, rtol=0, atol=1e-9)


@pytest.mark.oracle
def test_ego_rk4_fourth_order_convergence():
    s0 = VehicleState(20.0, 12.0, -2.0)
    exact = closed_form(s0, 3.0, 12.0, 4.0)
    errs = [np.max(np.abs(integrate(s0, 3.0, 12.0, dt, int(round(4.0 / dt))).as_array() - exact))
            for dt in (0.2, 0.1)]
    assert 12.0 < errs[0] / errs[1] < 20.0


@pytest.mark.oracle
def test_ego_rk4_matches_fine_step():
    s0 = VehicleState(25.0, 20.0, 1.0)
    coarse = integrate(s0, -2.0, 18.0, 0.01, 500).as_array()
    fine = integrate(s0, -2.0, 18.0, 0.0005, 10000).as_array()
    np.testing.assert_allclose(coarse, fine, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(u=st.floats(-10, 10), w0=st.floats(1, 30), a0=st.floats(-5, 5))
def test_gap_rate_equals_speed_difference(u, w0, a0):
    # with w_pred = w at the start, d moves by about -a0 dt^2 / 2
    s = VehicleState(10.0, w0, a0)
    nxt = ego_step(s, u, w0, 1e-3)
    assert nxt.d - s.d == pytest.approx(-0.5 * a0 * 1e-6, abs=1e-8)
