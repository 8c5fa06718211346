import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caevsim.attacks import AttackProfile, AttackSet
from caevsim.cacc import CaccGains
from caevsim.engine import run
from caevsim.errors import ConfigError
from caevsim.platoon import VehicleState, ego_step
from caevsim.residuals import (InputEstimate, ObserverConfig, ResidualState, advance_filter,
                               local_input_estimate, place_observer_gain, residual_norm,
                               vehicle_matrices, vehicle_observer_step)
from conftest import constant_cycle_cfg

H = 0.6
POLES = (-2.0, -2.5, -3.0)


def observer_run(x0, xh0, u_true, u_hat, w_pred, T, dt=0.01):
    gain = place_observer_gain(vehicle_matrices(H)[0], POLES)
    x = VehicleState(*x0)
    res = ResidualState(x_hat_v=np.array(xh0, dtype=float))
    est = InputEstimate(w_pred, 0.0, u_hat, u_hat)
    for _ in range(int(round(T / dt))):
        x_prev = x
        x = ego_step(x, u_true, w_pred, dt, H)
        res = vehicle_observer_step(res, x, est, gain, H, dt, x_prev)
    return res.r_v, gain


@pytest.mark.oracle
def test_pole_placement_exact():
    A, _ = vehicle_matrices(H)
    M = place_observer_gain(A, POLES)
    eig = np.sort(np.linalg.eigvals(A - M).real)
    np.testing.assert_allclose(eig, sorted(POLES), atol=1e-9)


@pytest.mark.oracle
@settings(max_examples=40, deadline=None)
@given(p=st.lists(st.floats(-20, -0.1), min_size=3, max_size=3, unique=True))
def test_pole_placement_random_real(p):
    if min(abs(a - b) for i, a in enumerate(p) for b in p[i + 1:]) < 1e-3:
        return
    A, _ = vehicle_matrices(H)
    eig = np.sort(np.linalg.eigvals(A - place_observer_gain(A, p)).real)
    np.testing.assert_allclose(eig, sorted(p), atol=1e-9 * max(1.0, max(abs(x) for x in p)))


@pytest.mark.oracle
def test_pole_placement_complex_pair_and_output_matrix():
    A, _ = vehicle_matrices(H)
    poles = [-1.0 + 2.0j, -1.0 - 2.0j, -4.0]
    eig = np.linalg.eigvals(A - place_observer_gain(A, poles))
    np.testing.assert_allclose(np.sort_complex(eig), np.sort_complex(np.array(poles)), atol=1e-9)
    C = np.array([[1.0, 0.0, 0.0]])  # range only
    M = place_observer_gain(A, [-2.0, -3.0, -4.0], C)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(A - M @ C).real), [-4, -3, -2],
                               atol=1e-9)


def test_requesting_open_loop_poles_gives_zero_gain():
    A = np.diag([-1.0, -2.0, -3.0])
    np.testing.assert_allclose(place_observer_gain(A, [-1.0, -2.0, -3.0]), 0.0, atol=1e-12)


@pytest.mark.parametrize("poles", [[-1, -1, -2], [0.5, -1, -2], [-1, -2]])
def test_bad_pole_requests(poles):
    with pytest.raises(ConfigError):
        place_observer_gain(vehicle_matrices(H)[0], poles)


def test_unobservable_pair_rejected():
    A = np.diag([-1.0, -2.0])
    with pytest.raises(ConfigError, match="observable"):
        place_observer_gain(A, [-3.0, -4.0], np.array([[1.0, 0.0]]))


# The observer sees the measurement interpolated linearly across a step, so
# a curved trajectory (d'' = -a) leaks an O(dt^2) term through M. Tolerances
# below are that bound; halving dt must cut the mismatch by about four.

def decay_mismatch(dt):
    x0 = np.array([20.0, 15.0, 0.0])
    r0 = np.array([0.5, -0.3, 0.2])
    T = 2.0
    r, M = observer_run(x0, x0 - r0, 0.8, 0.8, 15.0, T, dt)
    lam, V = np.linalg.eig(vehicle_matrices(H)[0] - M)
    expected = (V @ np.diag(np.exp(lam * T)) @ np.linalg.solve(V, r0)).real
    return r, expected


@pytest.mark.oracle
def test_residual_decay_matches_eigendecomposition():
    r, expected = decay_mismatch(0.01)
    np.testing.assert_allclose(r, expected, atol=2e-5)
    r2, _ = decay_mismatch(0.005)
    ratio = np.max(np.abs(r - expected)) / np.max(np.abs(r2 - expected))
    assert 3.5 < ratio < 4.5


@pytest.mark.oracle
def test_residual_decay_exact_on_straight_trajectory():
    # a = u = 0 keeps d linear in t, so interpolation is exact
    x0 = np.array([20.0, 15.0, 0.0])
    r0 = np.array([0.5, -0.3, 0.2])
    r, M = observer_run(x0, x0 - r0, 0.0, 0.0, 12.0, 2.0)
    lam, V = np.linalg.eig(vehicle_matrices(H)[0] - M)
    expected = (V @ np.diag(np.exp(lam * 2.0)) @ np.linalg.solve(V, r0)).real
    np.testing.assert_allclose(r, expected, atol=1e-9)


@pytest.mark.oracle
def test_step_offset_static_gain():
    delta = 1.7
    r, M = observer_run([20.0, 15.0, 0.0], [20.0, 15.0, 0.0], 0.5 + delta, 0.5, 15.0, 20.0)
    A, B = vehicle_matrices(H)
    r_ss = -np.linalg.solve(A - M, B[:, 1] * delta)
    # steady a = 2.2 bends d; bound dt^2 * |a| * |M| / 8 / |pole|
    np.testing.assert_allclose(r, r_ss, rtol=1e-6, atol=3e-5)


@pytest.mark.oracle
def test_engine_residual_under_accel_attack_matches_static_gain(tmp_path):
    # ideal actuator: the injected acceleration is exactly the unmodelled input
    cfg = constant_cycle_cfg(tmp_path, duration=40.0, battery={"ideal_actuator": True})
    cfg = cfg.replace(attacks=AttackSet([AttackProfile("accel_comm", magnitude=2.0,
                                                       t_start=5.0)]))
    tr = run(cfg)
    A, B = vehicle_matrices(H)
    M = cfg.observer.vehicle_gain(H)
    r_ss = -np.linalg.solve(A - M, B[:, 1] * 2.0)
    got = np.array([tr["r_v_d"][-1], tr["r_v_w"][-1], tr["r_v_a"][-1]])
    np.testing.assert_allclose(got, r_ss, rtol=1e-5, atol=1e-8)


def test_local_input_estimate():
    g = CaccGains()
    s = VehicleState(20.0, 10.0, 0.5)
    est = local_input_estimate(s, 1.0, 10.5, g, filter_tau=0.1, u_rl=-2.0)
    assert est.w_pred == 11.0
    assert est.a_pred == pytest.approx(5.0)
    expect = 0.7 * (20 - 6 - 5) + 1.0 * (1.0 - 0.3) + 5.0 - 2.0
    assert est.u_req == pytest.approx(expect)
    with_bat = local_input_estimate(s, 1.0, 10.5, g, V_meas=3.2, K_b=0.1, u_rl=-2.0)
    assert with_bat.u == pytest.approx(expect * 0.32 / 1.32)


def test_filter_converges_to_input():
    z = 0.0
    for _ in range(200):
        z = advance_filter(z, 3.0, 0.1, 0.01)
    assert z == pytest.approx(3.0 * (1 - np.exp(-20.0)))


def test_residual_norms():
    r = [3.0, -4.0, 0.0]
    assert residual_norm(r) == 5.0
    assert residual_norm(r, "component-wise") == 4.0


@pytest.mark.parametrize("kw, path", [
    (dict(poles_v=(-1.0, -2.0, 0.1)), "observer.poles_v"),
    (dict(theta_v=0.0), "observer.theta_v"),
    (dict(residual_norm="max"), "observer.residual_norm"),
])
def test_observer_config_validation(kw, path):
    with pytest.raises(ConfigError) as info:
        ObserverConfig(**kw)
    assert info.value.problems[0][0] == path
