import numpy as np
import pytest

from panmpc import model, quat
from panmpc.model import (
    OMEGA,
    POS,
    QUAT,
    SPEED_START,
    VEL,
    GtmrParams,
    State,
    build_allocation,
    dynamics,
    dynamics_jacobians,
    hover_speeds,
    hover_state,
    quad_x_params,
    rk4_step,
    rk4_step_with_sensitivity,
)


def fd_jacobian(f, x, eps=1e-6):
    y0 = np.atleast_1d(f(x))
    J = np.zeros((y0.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xp[j] += eps
        xm = x.copy()
        xm[j] -= eps
        J[:, j] = (np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))) / (2.0 * eps)
    return J


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b))


def random_state(rng, params, speed_range=(45.0, 85.0)):
    x = np.zeros(model.state_dim(params.n_rotors))
    x[POS] = rng.uniform(-3.0, 3.0, size=3)
    x[QUAT] = quat.random_unit_quat(rng)
    x[VEL] = rng.uniform(-2.0, 2.0, size=3)
    x[OMEGA] = rng.uniform(-1.5, 1.5, size=3)
    x[SPEED_START:] = rng.uniform(*speed_range, size=params.n_rotors)
    return x


@pytest.fixture(scope="module")
def params():
    return quad_x_params()


# --- allocation --------------------------------------------------------------


def test_allocation_plus_configuration():
    # Four coplanar rotors on the x/y axes, all thrusting along +z.
    L, cf, ct = 0.2, 1.5e-4, 0.016
    positions = np.array([[L, 0, 0], [0, L, 0], [-L, 0, 0], [0, -L, 0]], dtype=float)
    axes = np.tile([0.0, 0.0, 1.0], (4, 1))
    spins = np.array([1.0, -1.0, 1.0, -1.0])
    F, M = build_allocation(positions, axes, spins, cf, ct)
    np.testing.assert_allclose(F[0:2, :], np.zeros((2, 4)), atol=1e-18)
    np.testing.assert_allclose(F[2, :], np.full(4, cf), atol=1e-18)
    # Drag terms alternate sign with the spin direction.
    np.testing.assert_allclose(M[2, :], -cf * ct * spins, atol=1e-18)
    # Lever arms: r x e3 = (y, -x, 0), so the +y rotor rolls about +x and the
    # +x rotor pitches about -y.
    np.testing.assert_allclose(M[0, :], cf * np.array([0.0, L, 0.0, -L]), atol=1e-18)
    np.testing.assert_allclose(M[1, :], cf * np.array([-L, 0.0, L, 0.0]), atol=1e-18)


def test_allocation_single_rotor_at_origin():
    F, M = build_allocation([[0, 0, 0]], [[0, 0, 1]], [1.0], 2.0e-4, 0.01)
    np.testing.assert_allclose(F[:, 0], [0.0, 0.0, 2.0e-4], atol=1e-18)
    np.testing.assert_allclose(M[:, 0], [0.0, 0.0, -2.0e-6], atol=1e-18)


def test_hover_speeds_mid_range(params):
    speeds = hover_speeds(params)
    np.testing.assert_allclose(speeds, np.full(4, 65.0), atol=1e-9)
    # Thrust coefficient was sized so the trim sits mid-range by construction.
    w = params.thrust_input(speeds)
    lift = params.force_alloc @ w
    np.testing.assert_allclose(lift, [0.0, 0.0, params.mass * params.gravity], atol=1e-9)


def test_params_validation():
    with pytest.raises(ValueError, match="axes"):
        GtmrParams(
            mass=1.0, gravity=9.81, inertia=np.eye(3) * 0.01,
            rotor_positions=[[0.1, 0, 0]], rotor_axes=[[0, 0, 2.0]], rotor_spins=[1.0],
            thrust_coeff=1e-4, drag_to_thrust=0.01,
            speed_min=10, speed_max=100, accel_min=-50, accel_max=50,
        )
    with pytest.raises(ValueError, match="speed_min"):
        quad_x_params(speed_min=90.0, speed_max=40.0)
    with pytest.raises(ValueError, match="thrust model"):
        quad_x_params(thrust_model="cubic")


# --- continuous dynamics ------------------------------------------------------


def test_trim_is_an_equilibrium(params):
    x = hover_state(params)
    xdot = dynamics(params, x, np.zeros(4))
    np.testing.assert_allclose(xdot, np.zeros_like(xdot), atol=1e-12)


def test_rotors_off_free_fall(params):
    x = hover_state(params)
    x[SPEED_START:] = 0.0
    xdot = dynamics(params, x, np.zeros(4))
    np.testing.assert_allclose(xdot[VEL], [0.0, 0.0, -params.gravity], atol=1e-12)
    np.testing.assert_allclose(xdot[OMEGA], np.zeros(3), atol=1e-12)


def test_gyroscopic_torque_vanishes_on_principal_axis(params):
    x = hover_state(params)
    x[SPEED_START:] = 0.0
    x[OMEGA] = [0.0, 0.0, 3.0]
    xdot = dynamics(params, x, np.zeros(4))
    np.testing.assert_allclose(xdot[OMEGA], np.zeros(3), atol=1e-12)
    # Off-axis spin precesses because the inertia is not isotropic.
    x[OMEGA] = [2.0, 0.0, 3.0]
    xdot = dynamics(params, x, np.zeros(4))
    assert np.linalg.norm(xdot[OMEGA]) > 1.0


def test_dynamics_translation_invariant(params):
    rng = np.random.default_rng(20)
    x = random_state(rng, params)
    rate = rng.uniform(-50.0, 50.0, size=4)
    shifted = x.copy()
    shifted[POS] += np.array([10.0, -4.0, 2.0])
    d1 = dynamics(params, x, rate)
    d2 = dynamics(params, shifted, rate)
    np.testing.assert_allclose(d1, d2, atol=1e-12)


def test_linear_thrust_model_switch():
    p_lin = quad_x_params(thrust_model="linear")
    speeds = hover_speeds(p_lin)
    x = hover_state(p_lin)
    np.testing.assert_allclose(dynamics(p_lin, x, np.zeros(4)), np.zeros(17), atol=1e-12)
    # Linear model: doubling speeds doubles specific thrust.
    x[SPEED_START:] = 2.0 * speeds
    up = dynamics(p_lin, x, np.zeros(4))[VEL][2]
    assert up == pytest.approx(p_lin.gravity, abs=1e-9)


def test_dynamics_jacobians_match_finite_differences(params):
    rng = np.random.default_rng(21)
    for _ in range(20):
        x = random_state(rng, params)
        rate = rng.uniform(-100.0, 180.0, size=4)
        dfdx, dfdu = dynamics_jacobians(params, x, rate)
        J_fd = fd_jacobian(lambda z: dynamics(params, z, rate), x)
        assert rel_err(dfdx, J_fd) < 1e-8
        Ju_fd = fd_jacobian(lambda r: dynamics(params, x, r), rate)
        assert rel_err(dfdu, Ju_fd) < 1e-6


# --- integration --------------------------------------------------------------


def test_rk4_fixed_point_at_trim(params):
    x = hover_state(params)
    x_next = rk4_step(params, x, np.zeros(4), 0.015)
    np.testing.assert_allclose(x_next, x, atol=1e-12)


def test_rk4_ballistic_drop_is_exact(params):
    # With rotors off the vertical motion is quadratic in time, which RK4
    # reproduces exactly up to roundoff.
    x = hover_state(params)
    x[SPEED_START:] = 0.0
    h = 0.001
    for _ in range(1000):
        x = rk4_step(params, x, np.zeros(4), h)
    assert x[2] == pytest.approx(-0.5 * params.gravity, abs=1e-9)
    assert x[9] == pytest.approx(-params.gravity, abs=1e-9)


def test_rk4_zero_step(params):
    rng = np.random.default_rng(22)
    x = random_state(rng, params)
    x_next, A, B = rk4_step_with_sensitivity(params, x, np.zeros(4), 0.0)
    np.testing.assert_allclose(x_next, x, atol=0.0)
    np.testing.assert_allclose(A, np.eye(17), atol=0.0)
    np.testing.assert_allclose(B, np.zeros((17, 4)), atol=0.0)
    with pytest.raises(ValueError):
        rk4_step(params, x, np.zeros(4), -1e-3)


def test_rk4_energy_conservation_torque_free(params):
    # Rotors off, so the only forces are gravity (conservative) and nothing
    # else; total mechanical energy must be preserved by the integrator.
    x = hover_state(params)
    x[SPEED_START:] = 0.0
    x[VEL] = [1.0, -2.0, 3.0]
    x[OMEGA] = [2.0, -1.5, 1.0]

    def energy(state):
        kin = 0.5 * params.mass * np.dot(state[VEL], state[VEL])
        rot = 0.5 * state[OMEGA] @ params.inertia @ state[OMEGA]
        pot = params.mass * params.gravity * state[2]
        return kin + rot + pot

    e0 = energy(x)
    for _ in range(1000):
        x = rk4_step(params, x, np.zeros(4), 0.001)
    assert abs(energy(x) - e0) < 1e-6


def test_rk4_sensitivities_match_finite_differences(params):
    rng = np.random.default_rng(23)
    h = 0.015
    for _ in range(15):
        x = random_state(rng, params)
        rate = rng.uniform(-100.0, 180.0, size=4)
        _, A, B = rk4_step_with_sensitivity(params, x, rate, h)
        A_fd = fd_jacobian(lambda z: rk4_step(params, z, rate, h, renormalize=False), x)
        B_fd = fd_jacobian(lambda r: rk4_step(params, x, r, h, renormalize=False), rate)
        assert rel_err(A, A_fd) < 1e-7
        assert rel_err(B, B_fd) < 1e-6


def test_sensitivity_composition_over_multiple_steps(params):
    rng = np.random.default_rng(24)
    h = 0.01
    k = 8
    x0 = random_state(rng, params, speed_range=(55.0, 75.0))
    x0[OMEGA] *= 0.3
    rate = rng.uniform(-20.0, 20.0, size=4)

    def k_step(z):
        for _ in range(k):
            z = rk4_step(params, z, rate, h, renormalize=False)
        return z

    A_total = np.eye(17)
    x = x0.copy()
    for _ in range(k):
        x, A, _ = rk4_step_with_sensitivity(params, x, rate, h)
        A_total = A @ A_total
    J_fd = fd_jacobian(k_step, x0)
    assert rel_err(A_total, J_fd) < 1e-4


def test_rk4_convergence_order(params):
    # Endpoint error against a fine-step reference must shrink ~16x per
    # halving of h on a tumbling, thrusting trajectory.
    x0 = hover_state(params)
    x0[VEL] = [1.0, -1.0, 0.5]
    x0[OMEGA] = [2.0, -1.5, 1.0]
    rate = np.array([30.0, -30.0, 20.0, -20.0])
    T = 0.064

    def endpoint(h):
        x = x0.copy()
        for _ in range(int(round(T / h))):
            x = rk4_step(params, x, rate, h)
        return x

    ref = endpoint(1e-4)
    errors = [np.linalg.norm(endpoint(h) - ref) for h in (8e-3, 4e-3, 2e-3)]
    for e_coarse, e_fine in zip(errors, errors[1:]):
        factor = e_coarse / e_fine
        assert 12.0 <= factor <= 20.0


# --- state containers ---------------------------------------------------------


def test_state_roundtrip(params):
    rng = np.random.default_rng(25)
    x = random_state(rng, params)
    s = State.from_vector(x)
    np.testing.assert_allclose(s.as_vector(), x, atol=0.0)
    assert s.rotor_speeds.shape == (4,)


def test_tangent_lift_projection_consistency(params):
    rng = np.random.default_rng(26)
    for _ in range(10):
        x = random_state(rng, params)
        L = model.lift_matrix(x)
        P = model.proj_matrix(x)
        np.testing.assert_allclose(P @ L, np.eye(16), atol=1e-12)


def test_retract_diff_roundtrip(params):
    rng = np.random.default_rng(27)
    for _ in range(10):
        x = random_state(rng, params)
        dx = rng.uniform(-0.3, 0.3, size=16)
        y = model.state_retract(x, dx)
        np.testing.assert_allclose(model.state_diff(y, x), dx, atol=1e-12)
        np.testing.assert_allclose(model.state_retract(x, np.zeros(16)), x, atol=0.0)


def test_retract_matches_lift_to_first_order(params):
    rng = np.random.default_rng(28)
    x = random_state(rng, params)
    L = model.lift_matrix(x)
    dx = 1e-6 * rng.normal(size=16)
    y = model.state_retract(x, dx)
    np.testing.assert_allclose(y, x + L @ dx, atol=1e-11)
