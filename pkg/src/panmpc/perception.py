"""Pinhole-camera geometry: projection, field-of-view margins, bearing terms.

The camera is rigidly mounted on the body at ``offset`` with orientation
``mount`` (a unit quaternion taking camera-frame vectors to body-frame ones).
Camera coordinates follow the usual optical convention: z along the optical
axis, x to the right in the image, y down. A point is visible when its
optical-axis coordinate exceeds ``z_min`` and it lies inside the horizontal
and vertical view cones of half-apertures ``alpha_h`` and ``alpha_v``; both
cone conditions are expressed as affine residuals tan(alpha) * z +/- (x or y)
that must stay nonnegative, so they drop straight into a QP. A half-aperture
of pi / 2 disables that cone pair and leaves only the z_min floor.

Besides the hard visibility residuals, the tracking cost uses two smooth
centering terms: the cosine of the angle between the optical axis and the
target direction, and its exact time derivative. Analytic Jacobians with
respect to the multiplicative state perturbation are provided for the
Gauss-Newton solver and are checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quat import quat_to_rot, skew

# Optical axis along body +x, image x along body -y, image y along body -z.
FORWARD_MOUNT = np.array([0.5, -0.5, 0.5, -0.5])
# Camera axes coincide with the body axes (optical axis along body +z).
IDENTITY_MOUNT = np.array([1.0, 0.0, 0.0, 0.0])

_HALF_PI = np.pi / 2.0


@dataclass
class CameraModel:
    """Rigid camera mounting and field-of-view description.

    Parameters
    ----------
    offset : (3,) ndarray
        Camera origin in the body frame, m.
    mount : (4,) ndarray
        Unit quaternion rotating camera-frame vectors into the body frame.
    alpha_h, alpha_v : float
        Horizontal / vertical half-apertures in (0, pi/2]; pi/2 disables the
        corresponding cone pair.
    z_min : float
        Minimum optical-axis coordinate for a point to count as visible, m.
    """

    offset: np.ndarray
    mount: np.ndarray
    alpha_h: float = _HALF_PI
    alpha_v: float = _HALF_PI
    z_min: float = 0.05

    rot_bc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.offset = np.asarray(self.offset, dtype=float)
        self.mount = np.asarray(self.mount, dtype=float)
        if self.offset.shape != (3,):
            raise ValueError("camera offset must be a 3-vector")
        if self.mount.shape != (4,) or abs(np.linalg.norm(self.mount) - 1.0) > 1e-6:
            raise ValueError("camera mount must be a unit quaternion")
        for name, alpha in (("alpha_h", self.alpha_h), ("alpha_v", self.alpha_v)):
            if not 0.0 < alpha <= _HALF_PI + 1e-12:
                raise ValueError(f"{name} must lie in (0, pi/2]")
        if self.z_min <= 0.0:
            raise ValueError("z_min must be positive")
        self.rot_bc = quat_to_rot(self.mount)

    @property
    def horizontal_cone_active(self) -> bool:
        return self.alpha_h < _HALF_PI - 1e-12

    @property
    def vertical_cone_active(self) -> bool:
        return self.alpha_v < _HALF_PI - 1e-12

    def n_visibility_rows(self) -> int:
        return 1 + 2 * self.horizontal_cone_active + 2 * self.vertical_cone_active


def project_to_camera(
    cam: CameraModel, pos: np.ndarray, att: np.ndarray, target: np.ndarray
) -> np.ndarray:
    """Coordinates of a world point in the camera frame."""
    body = quat_to_rot(att).T @ (target - pos)
    return cam.rot_bc.T @ (body - cam.offset)


def camera_point_rate(
    cam: CameraModel,
    pos: np.ndarray,
    att: np.ndarray,
    vel: np.ndarray,
    omega: np.ndarray,
    target: np.ndarray,
    target_vel: np.ndarray,
) -> np.ndarray:
    """Time derivative of ``project_to_camera`` along the rigid-body motion."""
    R_wb = quat_to_rot(att)
    body_rel = R_wb.T @ (target - pos)
    rel_vel_body = R_wb.T @ (target_vel - vel)
    return cam.rot_bc.T @ (rel_vel_body - np.cross(omega, body_rel))


def fov_residuals(cam: CameraModel, cp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cone margins (tan(alpha) * z -/+ coordinate) for both image axes.

    Each active axis yields the pair (tan * z - coord, tan * z + coord); a
    disabled axis (half-aperture pi / 2) yields an empty pair. Raises if the
    point sits at or behind the camera plane, where the affine form is
    meaningless.
    """
    if cp[2] <= 0.0:
        raise ValueError("point is behind the camera plane")
    r_h = np.empty(0)
    r_v = np.empty(0)
    if cam.horizontal_cone_active:
        t = np.tan(cam.alpha_h) * cp[2]
        r_h = np.array([t - cp[0], t + cp[0]])
    if cam.vertical_cone_active:
        t = np.tan(cam.alpha_v) * cp[2]
        r_v = np.array([t - cp[1], t + cp[1]])
    return r_h, r_v


def cheirality_residual(cam: CameraModel, cp: np.ndarray) -> float:
    """Margin of the minimum-depth constraint z >= z_min."""
    return cp[2] - cam.z_min


def cos_beta(cp: np.ndarray) -> float:
    """Cosine of the angle between the optical axis and the point direction."""
    n = np.linalg.norm(cp)
    if n < 1e-9:
        raise ValueError("point coincides with the camera origin")
    return cp[2] / n


def cos_beta_rate(
    cam: CameraModel,
    pos: np.ndarray,
    att: np.ndarray,
    vel: np.ndarray,
    omega: np.ndarray,
    target: np.ndarray,
    target_vel: np.ndarray,
) -> float:
    """Exact time derivative of ``cos_beta`` under the rigid-body kinematics."""
    cp = project_to_camera(cam, pos, att, target)
    n = np.linalg.norm(cp)
    if n < 1e-9:
        raise ValueError("point coincides with the camera origin")
    cp_dot = camera_point_rate(cam, pos, att, vel, omega, target, target_vel)
    return cp_dot[2] / n - cp[2] * np.dot(cp, cp_dot) / n**3


# --- Jacobians for the Gauss-Newton solver ------------------------------------
#
# All rows are taken with respect to the tangent perturbation
# [dpos(3), datt(3), dvel(3), domega(3)], where datt acts multiplicatively on
# the attitude: q <- q * quat_exp(datt / 2).


def _camera_point_jacobian(
    cam: CameraModel, att: np.ndarray, body_rel: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """d cp / d pos and d cp / d datt given body_rel = R(q)^T (target - pos)."""
    R_wb = quat_to_rot(att)
    RcT = cam.rot_bc.T
    d_pos = -RcT @ R_wb.T
    d_att = RcT @ skew(body_rel)
    return d_pos, d_att


def visibility_constraints(
    cam: CameraModel,
    pos: np.ndarray,
    att: np.ndarray,
    target: np.ndarray,
    with_jacobian: bool = False,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Visibility residuals stacked as [z floor, horizontal pair, vertical pair].

    All residuals must be nonnegative for the target to be visible. With
    ``with_jacobian`` the second return value holds the rows with respect to
    [dpos, datt] (shape m x 6); otherwise it is None. The caller is expected
    to have checked that the point is in front of the camera.
    """
    cp = project_to_camera(cam, pos, att, target)
    rows_c = [np.array([0.0, 0.0, 1.0])]
    resid = [cp[2] - cam.z_min]
    if cam.horizontal_cone_active:
        t = np.tan(cam.alpha_h)
        rows_c.append(np.array([-1.0, 0.0, t]))
        rows_c.append(np.array([1.0, 0.0, t]))
        resid.extend([t * cp[2] - cp[0], t * cp[2] + cp[0]])
    if cam.vertical_cone_active:
        t = np.tan(cam.alpha_v)
        rows_c.append(np.array([0.0, -1.0, t]))
        rows_c.append(np.array([0.0, 1.0, t]))
        resid.extend([t * cp[2] - cp[1], t * cp[2] + cp[1]])
    resid = np.array(resid)
    if not with_jacobian:
        return resid, None
    body_rel = quat_to_rot(att).T @ (target - pos)
    d_pos, d_att = _camera_point_jacobian(cam, att, body_rel)
    rows_c = np.vstack(rows_c)
    J = np.hstack([rows_c @ d_pos, rows_c @ d_att])
    return resid, J


def bearing_alignment(
    cam: CameraModel,
    pos: np.ndarray,
    att: np.ndarray,
    vel: np.ndarray,
    omega: np.ndarray,
    target: np.ndarray,
    target_vel: np.ndarray,
    with_jacobian: bool = False,
) -> tuple[float, float, np.ndarray | None]:
    """cos_beta and its rate, optionally with their 2 x 12 Jacobian.

    The Jacobian rows are with respect to [dpos, datt, dvel, domega]. Uses the
    chain rule through the camera point cp and its rate mu; both are exact.
    """
    R_wb = quat_to_rot(att)
    RcT = cam.rot_bc.T
    body_rel = R_wb.T @ (target - pos)
    cp = RcT @ (body_rel - cam.offset)
    n = np.linalg.norm(cp)
    if n < 1e-9:
        raise ValueError("point coincides with the camera origin")
    rel_vel_body = R_wb.T @ (target_vel - vel)
    mu = RcT @ (rel_vel_body - np.cross(omega, body_rel))

    cb = cp[2] / n
    cdot = np.dot(cp, mu)
    cbr = mu[2] / n - cp[2] * cdot / n**3

    if not with_jacobian:
        return cb, cbr, None

    e3 = np.array([0.0, 0.0, 1.0])
    dcb_dc = e3 / n - cp[2] * cp / n**3
    dcbr_dc = (
        -mu[2] * cp / n**3
        - cdot * e3 / n**3
        - cp[2] * mu / n**3
        + 3.0 * cp[2] * cdot * cp / n**5
    )
    dcbr_dmu = e3 / n - cp[2] * cp / n**3

    dc_dpos, dc_datt = _camera_point_jacobian(cam, att, body_rel)
    dmu_dpos = RcT @ skew(omega) @ R_wb.T
    dmu_datt = RcT @ (skew(rel_vel_body) - skew(omega) @ skew(body_rel))
    dmu_dvel = -RcT @ R_wb.T
    dmu_domega = RcT @ skew(body_rel)

    J = np.zeros((2, 12))
    J[0, 0:3] = dcb_dc @ dc_dpos
    J[0, 3:6] = dcb_dc @ dc_datt
    J[1, 0:3] = dcbr_dc @ dc_dpos + dcbr_dmu @ dmu_dpos
    J[1, 3:6] = dcbr_dc @ dc_datt + dcbr_dmu @ dmu_datt
    J[1, 6:9] = dcbr_dmu @ dmu_dvel
    J[1, 9:12] = dcbr_dmu @ dmu_domega
    return cb, cbr, J
