"""Rigid-body model of a multi-rotor with first-order rotor-speed states.

State vector layout (flat, length 13 + n for n rotors):

    [0:3]   position in the world frame, m
    [3:7]   unit attitude quaternion (w, x, y, z), body to world
    [7:10]  linear velocity in the world frame, m/s
    [10:13] body angular rates, rad/s
    [13:]   rotor speeds, Hz

The control input is the rotor speed rate (Hz/s); speeds integrate it exactly,
which is what lets simple bounds on speeds and rates stand in for actuator
limits. Rotor geometry is generic: each rotor has a position, a thrust axis
and a spin sign, so tilted platforms use the same code path as flat quads.

Tangent-space helpers at the bottom parameterize attitude perturbations
multiplicatively, q <- q * exp(delta / 2) with delta a body-frame rotation
vector, giving a square, well-conditioned linearization for the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quat import (
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    quat_normalize,
    quat_right_mat,
    quat_to_rot,
    skew,
    tangent_basis,
)

POS = slice(0, 3)
QUAT = slice(3, 7)
VEL = slice(7, 10)
OMEGA = slice(10, 13)
SPEED_START = 13

_GRAV_AXIS = np.array([0.0, 0.0, 1.0])


def state_dim(n_rotors: int) -> int:
    return 13 + n_rotors


def tangent_dim(n_rotors: int) -> int:
    return 12 + n_rotors


@dataclass
class GtmrParams:
    """Physical parameters and actuator limits.

    Parameters
    ----------
    mass : float
        Vehicle mass, kg.
    gravity : float
        Gravitational acceleration, m/s^2.
    inertia : (3, 3) ndarray
        Body inertia matrix, kg m^2.
    rotor_positions : (n, 3) ndarray
        Rotor positions in the body frame, m.
    rotor_axes : (n, 3) ndarray
        Unit thrust axes in the body frame.
    rotor_spins : (n,) ndarray
        +1 for counter-clockwise rotors, -1 for clockwise (about the axis).
    thrust_coeff : float
        Thrust per unit of the thrust-model input (N/Hz^2 for the quadratic
        model, N/Hz for the linear one).
    drag_to_thrust : float
        Drag-torque-to-thrust ratio, m.
    speed_min, speed_max : float
        Rotor speed bounds, Hz.
    accel_min, accel_max : float
        Rotor speed rate bounds, Hz/s.
    thrust_model : str
        "quadratic" (force ~ speed^2) or "linear" (force ~ speed).
    """

    mass: float
    gravity: float
    inertia: np.ndarray
    rotor_positions: np.ndarray
    rotor_axes: np.ndarray
    rotor_spins: np.ndarray
    thrust_coeff: float
    drag_to_thrust: float
    speed_min: float
    speed_max: float
    accel_min: float
    accel_max: float
    thrust_model: str = "quadratic"

    inertia_inv: np.ndarray = field(init=False, repr=False)
    force_alloc: np.ndarray = field(init=False, repr=False)
    torque_alloc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.rotor_positions = np.atleast_2d(np.asarray(self.rotor_positions, dtype=float))
        self.rotor_axes = np.atleast_2d(np.asarray(self.rotor_axes, dtype=float))
        self.rotor_spins = np.atleast_1d(np.asarray(self.rotor_spins, dtype=float))
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")
        if self.gravity <= 0.0:
            raise ValueError("gravity must be positive")
        if self.inertia.shape != (3, 3) or not np.allclose(self.inertia, self.inertia.T):
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0.0):
            raise ValueError("inertia must be positive definite")
        n = self.rotor_positions.shape[0]
        if self.rotor_axes.shape != (n, 3) or self.rotor_spins.shape != (n,):
            raise ValueError("rotor geometry arrays must agree on the rotor count")
        norms = np.linalg.norm(self.rotor_axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("rotor axes must be unit vectors")
        if not (0.0 <= self.speed_min < self.speed_max):
            raise ValueError("need 0 <= speed_min < speed_max")
        if not self.accel_min < self.accel_max:
            raise ValueError("need accel_min < accel_max")
        if self.thrust_model not in ("quadratic", "linear"):
            raise ValueError(f"unknown thrust model {self.thrust_model!r}")
        self.inertia_inv = np.linalg.inv(self.inertia)
        self.force_alloc, self.torque_alloc = build_allocation(
            self.rotor_positions, self.rotor_axes, self.rotor_spins,
            self.thrust_coeff, self.drag_to_thrust,
        )

    @property
    def n_rotors(self) -> int:
        return self.rotor_positions.shape[0]

    def thrust_input(self, speeds: np.ndarray) -> np.ndarray:
        """Per-rotor thrust-model input w(speeds): speeds^2 or speeds."""
        if self.thrust_model == "quadratic":
            return speeds * speeds
        return speeds

    def thrust_input_grad(self, speeds: np.ndarray) -> np.ndarray:
        """Diagonal of d w / d speeds."""
        if self.thrust_model == "quadratic":
            return 2.0 * speeds
        return np.ones_like(speeds)


def build_allocation(
    positions: np.ndarray,
    axes: np.ndarray,
    spins: np.ndarray,
    thrust_coeff: float,
    drag_to_thrust: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Force and torque allocation matrices, both (3, n).

    Column i maps rotor i's thrust-model input to body force and torque:
    force = c_f * axis, torque = c_f * (pos x axis) - spin * c_f * c_tau * axis.
    The drag term opposes each rotor's spin about its own axis.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    axes = np.atleast_2d(np.asarray(axes, dtype=float))
    spins = np.atleast_1d(np.asarray(spins, dtype=float))
    force = thrust_coeff * axes.T
    torque = thrust_coeff * (
        np.cross(positions, axes).T - drag_to_thrust * spins[None, :] * axes.T
    )
    return force, torque


def quad_x_params(
    mass: float = 1.042,
    gravity: float = 9.84,
    inertia_diag: tuple[float, float, float] = (0.015, 0.015, 0.070),
    arm_length: float = 0.17,
    thrust_coeff: float | None = None,
    drag_to_thrust: float = 0.016,
    speed_min: float = 40.0,
    speed_max: float = 90.0,
    accel_min: float = -110.0,
    accel_max: float = 200.0,
    hover_speed: float = 65.0,
    thrust_model: str = "quadratic",
) -> GtmrParams:
    """Flat quadrotor in X configuration with alternating spin directions.

    When ``thrust_coeff`` is omitted it is sized so the vehicle hovers at
    ``hover_speed``, placing the trim point mid-range between the speed
    bounds.
    """
    if thrust_coeff is None:
        if thrust_model == "quadratic":
            thrust_coeff = mass * gravity / (4.0 * hover_speed**2)
        else:
            thrust_coeff = mass * gravity / (4.0 * hover_speed)
    d = arm_length / np.sqrt(2.0)
    positions = np.array([
        [d, d, 0.0],
        [-d, d, 0.0],
        [-d, -d, 0.0],
        [d, -d, 0.0],
    ])
    axes = np.tile(np.array([0.0, 0.0, 1.0]), (4, 1))
    spins = np.array([1.0, -1.0, 1.0, -1.0])
    return GtmrParams(
        mass=mass,
        gravity=gravity,
        inertia=np.diag(inertia_diag),
        rotor_positions=positions,
        rotor_axes=axes,
        rotor_spins=spins,
        thrust_coeff=thrust_coeff,
        drag_to_thrust=drag_to_thrust,
        speed_min=speed_min,
        speed_max=speed_max,
        accel_min=accel_min,
        accel_max=accel_max,
        thrust_model=thrust_model,
    )


def hover_speeds(params: GtmrParams) -> np.ndarray:
    """Rotor speeds that balance gravity with zero torque at level attitude.

    Solves the stacked allocation in the least-squares sense and checks the
    residual, so it also works for mildly tilted geometries that still admit
    a static trim.
    """
    A = np.vstack([params.force_alloc, params.torque_alloc])
    b = np.concatenate([params.mass * params.gravity * _GRAV_AXIS, np.zeros(3)])
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.linalg.norm(A @ w - b) > 1e-9 * max(1.0, np.linalg.norm(b)):
        raise ValueError("rotor geometry admits no static hover trim")
    if np.any(w < 0.0):
        raise ValueError("hover trim requires negative rotor thrust")
    speeds = np.sqrt(w) if params.thrust_model == "quadratic" else w
    lo, hi = params.speed_min, params.speed_max
    if np.any(speeds < lo - 1e-9) or np.any(speeds > hi + 1e-9):
        raise ValueError("hover trim falls outside the speed bounds")
    return speeds


@dataclass
class State:
    """Convenience wrapper over the flat state vector."""

    pos: np.ndarray
    att: np.ndarray
    vel: np.ndarray
    omega: np.ndarray
    rotor_speeds: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.att, self.vel, self.omega, self.rotor_speeds])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "State":
        x = np.asarray(x, dtype=float)
        return cls(
            pos=x[POS].copy(),
            att=x[QUAT].copy(),
            vel=x[VEL].copy(),
            omega=x[OMEGA].copy(),
            rotor_speeds=x[SPEED_START:].copy(),
        )


def hover_state(params: GtmrParams, pos=(0.0, 0.0, 0.0), yaw: float = 0.0) -> np.ndarray:
    """Flat state vector at rest in hover trim."""
    from .quat import yaw_quat

    x = np.zeros(state_dim(params.n_rotors))
    x[POS] = np.asarray(pos, dtype=float)
    x[QUAT] = yaw_quat(yaw)
    x[SPEED_START:] = hover_speeds(params)
    return x


def dynamics(params: GtmrParams, x: np.ndarray, rate: np.ndarray) -> np.ndarray:
    """Time derivative of the flat state under rotor speed rates ``rate``."""
    q = x[QUAT]
    v = x[VEL]
    omega = x[OMEGA]
    speeds = x[SPEED_START:]
    w = params.thrust_input(speeds)
    R = quat_to_rot(q)
    xdot = np.empty_like(x)
    xdot[POS] = v
    xdot[QUAT] = tangent_basis(q) @ omega
    xdot[VEL] = -params.gravity * _GRAV_AXIS + (R @ (params.force_alloc @ w)) / params.mass
    J_om = params.inertia @ omega
    xdot[OMEGA] = params.inertia_inv @ (params.torque_alloc @ w - np.cross(omega, J_om))
    xdot[SPEED_START:] = rate
    return xdot


def _rot_times_vec_jac_q(q: np.ndarray, t: np.ndarray) -> np.ndarray:
    """d(R(q) t)/dq for fixed t, using the homogeneous rotation form. (3, 4)."""
    w = q[0]
    qv = q[1:4]
    col_w = 2.0 * (w * t + np.cross(qv, t))
    block_v = (
        -2.0 * np.outer(t, qv)
        + 2.0 * np.outer(qv, t)
        + 2.0 * np.dot(qv, t) * np.eye(3)
        - 2.0 * w * skew(t)
    )
    return np.hstack([col_w[:, None], block_v])


def dynamics_jacobians(
    params: GtmrParams, x: np.ndarray, rate: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of ``dynamics`` with respect to the state and the rate input."""
    n = params.n_rotors
    nx = state_dim(n)
    q = x[QUAT]
    omega = x[OMEGA]
    speeds = x[SPEED_START:]
    w = params.thrust_input(speeds)
    dw = params.thrust_input_grad(speeds)
    R = quat_to_rot(q)

    dfdx = np.zeros((nx, nx))
    dfdu = np.zeros((nx, n))

    dfdx[POS, VEL] = np.eye(3)

    omega_quat = np.concatenate(([0.0], omega))
    dfdx[QUAT, QUAT] = 0.5 * quat_right_mat(omega_quat)
    dfdx[QUAT, OMEGA] = tangent_basis(q)

    body_force = params.force_alloc @ w
    dfdx[VEL, QUAT] = _rot_times_vec_jac_q(q, body_force) / params.mass
    dfdx[VEL, SPEED_START:] = (R @ (params.force_alloc * dw[None, :])) / params.mass

    J = params.inertia
    dfdx[OMEGA, OMEGA] = params.inertia_inv @ (skew(J @ omega) - skew(omega) @ J)
    dfdx[OMEGA, SPEED_START:] = params.inertia_inv @ (params.torque_alloc * dw[None, :])

    dfdu[SPEED_START:, :] = np.eye(n)
    return dfdx, dfdu


def rk4_step(
    params: GtmrParams,
    x: np.ndarray,
    rate: np.ndarray,
    h: float,
    renormalize: bool = True,
) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step of length ``h >= 0``.

    The attitude quaternion is renormalized after the update; pass
    ``renormalize=False`` to get the raw polynomial map that the sensitivity
    propagation differentiates.
    """
    if h < 0.0:
        raise ValueError("step size must be nonnegative")
    if h == 0.0:
        return x.copy()
    k1 = dynamics(params, x, rate)
    k2 = dynamics(params, x + 0.5 * h * k1, rate)
    k3 = dynamics(params, x + 0.5 * h * k2, rate)
    k4 = dynamics(params, x + h * k3, rate)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if renormalize:
        x_next[QUAT] = quat_normalize(x_next[QUAT])
    return x_next


def rk4_step_with_sensitivity(
    params: GtmrParams, x: np.ndarray, rate: np.ndarray, h: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RK4 step plus exact sensitivities of the raw (un-renormalized) map.

    Returns
    -------
    x_next : ndarray
        Next state, quaternion renormalized.
    A : (nx, nx) ndarray
        d x_next / d x of the raw map, chained through all four stages.
    B : (nx, n) ndarray
        d x_next / d rate of the raw map.
    """
    n = params.n_rotors
    nx = state_dim(n)
    if h < 0.0:
        raise ValueError("step size must be nonnegative")
    if h == 0.0:
        return x.copy(), np.eye(nx), np.zeros((nx, n))

    k1 = dynamics(params, x, rate)
    x2 = x + 0.5 * h * k1
    k2 = dynamics(params, x2, rate)
    x3 = x + 0.5 * h * k2
    k3 = dynamics(params, x3, rate)
    x4 = x + h * k3
    k4 = dynamics(params, x4, rate)

    J1x, J1u = dynamics_jacobians(params, x, rate)
    J2x, J2u = dynamics_jacobians(params, x2, rate)
    J3x, J3u = dynamics_jacobians(params, x3, rate)
    J4x, J4u = dynamics_jacobians(params, x4, rate)

    eye = np.eye(nx)
    S1 = J1x
    S2 = J2x @ (eye + 0.5 * h * S1)
    S3 = J3x @ (eye + 0.5 * h * S2)
    S4 = J4x @ (eye + h * S3)
    A = eye + (h / 6.0) * (S1 + 2.0 * S2 + 2.0 * S3 + S4)

    T1 = J1u
    T2 = J2x @ (0.5 * h * T1) + J2u
    T3 = J3x @ (0.5 * h * T2) + J3u
    T4 = J4x @ (h * T3) + J4u
    B = (h / 6.0) * (T1 + 2.0 * T2 + 2.0 * T3 + T4)

    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    x_next[QUAT] = quat_normalize(x_next[QUAT])
    return x_next, A, B


# --- tangent-space parameterization -----------------------------------------
#
# Local coordinates are [dpos, datt, dvel, domega, dspeeds] with datt a
# body-frame rotation vector: q(datt) = q * quat_exp(datt / 2).

ATT_TAN = slice(3, 6)
VEL_TAN = slice(6, 9)
OMEGA_TAN = slice(9, 12)
SPEED_TAN_START = 12


def lift_matrix(x: np.ndarray) -> np.ndarray:
    """(13+n, 12+n) matrix mapping tangent perturbations to ambient ones."""
    n = x.shape[0] - 13
    L = np.zeros((13 + n, 12 + n))
    L[POS, 0:3] = np.eye(3)
    L[QUAT, ATT_TAN] = tangent_basis(x[QUAT])
    L[VEL, VEL_TAN] = np.eye(3)
    L[OMEGA, OMEGA_TAN] = np.eye(3)
    L[SPEED_START:, SPEED_TAN_START:] = np.eye(n)
    return L


def proj_matrix(x: np.ndarray) -> np.ndarray:
    """(12+n, 13+n) left inverse of ``lift_matrix`` (for unit quaternions)."""
    n = x.shape[0] - 13
    P = np.zeros((12 + n, 13 + n))
    P[0:3, POS] = np.eye(3)
    P[ATT_TAN, QUAT] = 4.0 * tangent_basis(x[QUAT]).T
    P[VEL_TAN, VEL] = np.eye(3)
    P[OMEGA_TAN, OMEGA] = np.eye(3)
    P[SPEED_TAN_START:, SPEED_START:] = np.eye(n)
    return P


def state_retract(x: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Apply a tangent step: additive everywhere, multiplicative on attitude."""
    out = x.copy()
    out[POS] += dx[0:3]
    out[QUAT] = quat_normalize(quat_mul(x[QUAT], quat_exp(0.5 * dx[ATT_TAN])))
    out[VEL] += dx[VEL_TAN]
    out[OMEGA] += dx[OMEGA_TAN]
    out[SPEED_START:] += dx[SPEED_TAN_START:]
    return out


def state_diff(x: np.ndarray, x_ref: np.ndarray) -> np.ndarray:
    """Tangent coordinates of ``x`` about ``x_ref``; inverse of state_retract."""
    n = x.shape[0] - 13
    dx = np.empty(12 + n)
    dx[0:3] = x[POS] - x_ref[POS]
    dx[ATT_TAN] = 2.0 * quat_log(quat_mul(quat_conj(x_ref[QUAT]), x[QUAT]))
    dx[VEL_TAN] = x[VEL] - x_ref[VEL]
    dx[OMEGA_TAN] = x[OMEGA] - x_ref[OMEGA]
    dx[SPEED_TAN_START:] = x[SPEED_START:] - x_ref[SPEED_START:]
    return dx
