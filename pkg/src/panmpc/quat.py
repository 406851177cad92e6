"""Quaternion and SO(3) helpers.

Quaternions are numpy arrays of shape (4,) in scalar-first order (w, x, y, z),
Hamilton convention. A unit quaternion q rotates body-frame vectors into the
world frame through ``quat_to_rot(q)``.

The logarithm returns the half-angle rotation vector (theta / 2 * axis), so
``quat_exp(quat_log(q)) == q`` up to sign. Sign handling everywhere picks the
representative with a nonnegative scalar part, which keeps geodesic errors in
[0, pi / 2] and makes the double cover invisible to callers.
"""

from __future__ import annotations

import numpy as np

_ZERO_NORM_TOL = 1e-12
_SMALL_ANGLE = 1e-8

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_mul(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 * q2 (applies q2's rotation first)."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    """Conjugate (w, -x, -y, -z); equals the inverse for unit quaternions."""
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n <= _ZERO_NORM_TOL:
        raise ValueError("cannot normalize a zero-norm quaternion")
    return q / n


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (body-to-world).

    Uses the homogeneous quadratic form, which is exact for unit inputs and
    scales with ``norm(q)**2`` otherwise; the dynamics Jacobians rely on that
    polynomial structure.
    """
    w, x, y, z = q
    return np.array([
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def quat_log(q: np.ndarray) -> np.ndarray:
    """Half-angle rotation vector of a unit quaternion.

    Returns (theta / 2) * axis with theta in [0, pi]; inputs with a negative
    scalar part are negated first so the result never exceeds pi / 2 in norm.
    Near the identity the first-order series (the vector part) is returned to
    avoid a 0 / 0.
    """
    if q[0] < 0.0:
        q = -q
    vec = q[1:4]
    s = np.linalg.norm(vec)
    if s < _SMALL_ANGLE:
        return vec.copy()
    half_angle = np.arctan2(s, q[0])
    return vec * (half_angle / s)


def quat_exp(v: np.ndarray) -> np.ndarray:
    """Inverse of quat_log: maps a half-angle rotation vector to a unit quaternion."""
    a = np.linalg.norm(v)
    if a < _SMALL_ANGLE:
        # First-order series; renormalize to stay on the unit sphere.
        return quat_normalize(np.array([1.0, v[0], v[1], v[2]]))
    s = np.sin(a) / a
    return np.array([np.cos(a), s * v[0], s * v[1], s * v[2]])


def geodesic_error(q: np.ndarray, q_des: np.ndarray) -> np.ndarray:
    """Attitude error vector quat_log(q * conj(q_des)); zero iff q == +/- q_des."""
    return quat_log(quat_mul(q, quat_conj(q_des)))


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n <= _ZERO_NORM_TOL:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis / n))


def yaw_quat(yaw: float) -> np.ndarray:
    """Unit quaternion for a rotation by ``yaw`` about the world z axis."""
    half = 0.5 * yaw
    return np.array([np.cos(half), 0.0, 0.0, np.sin(half)])


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def quat_left_mat(q: np.ndarray) -> np.ndarray:
    """Matrix L with L(q) r == quat_mul(q, r) for any quaternion r."""
    w, x, y, z = q
    return np.array([
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ])


def quat_right_mat(q: np.ndarray) -> np.ndarray:
    """Matrix R with R(q) r == quat_mul(r, q) for any quaternion r."""
    w, x, y, z = q
    return np.array([
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ])


def tangent_basis(q: np.ndarray) -> np.ndarray:
    """4x3 matrix G with d/d(delta) [q * quat_exp(delta / 2)] = G at delta = 0.

    Columns are half the last three columns of the left-multiplication matrix.
    For unit q the columns are orthogonal with norm 1/2, so the pseudo-inverse
    is 4 G^T.
    """
    return 0.5 * quat_left_mat(q)[:, 1:4]


def so3_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3) at rotation vector phi (full angle).

    Satisfies Log(Exp(phi) Exp(u)) ~= phi + Jr_inv(phi) u for small u. Valid
    for norm(phi) < pi; the series branch keeps it smooth through zero.
    """
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (1.0 / 12.0) * K @ K
    c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * K @ K


def random_unit_quat(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed unit quaternion (used by the verification suites)."""
    q = rng.normal(size=4)
    return quat_normalize(q)
