import numpy as np
import pytest

from panmpc import quat
from panmpc.perception import (
    FORWARD_MOUNT,
    IDENTITY_MOUNT,
    CameraModel,
    bearing_alignment,
    camera_point_rate,
    cheirality_residual,
    cos_beta,
    cos_beta_rate,
    fov_residuals,
    project_to_camera,
    visibility_constraints,
)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def identity_cam(**kw):
    return CameraModel(offset=np.zeros(3), mount=IDENTITY_MOUNT, **kw)


def forward_cam(offset=(0.1, 0.0, 0.0), **kw):
    return CameraModel(offset=np.array(offset), mount=FORWARD_MOUNT, **kw)


def random_pose(rng):
    pos = rng.uniform(-3.0, 3.0, size=3)
    att = quat.random_unit_quat(rng)
    return pos, att


# --- projection ----------------------------------------------------------------


def test_project_identity_everything():
    cam = identity_cam()
    cp = project_to_camera(cam, np.zeros(3), IDENTITY, np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(cp, [0.0, 0.0, 1.0], atol=1e-15)


def test_project_forward_mount_looks_along_body_x():
    cam = forward_cam(offset=(0.0, 0.0, 0.0))
    cp = project_to_camera(cam, np.zeros(3), IDENTITY, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(cp, [0.0, 0.0, 1.0], atol=1e-12)
    # A point to the left of the body (+y) appears at negative image x.
    cp = project_to_camera(cam, np.zeros(3), IDENTITY, np.array([1.0, 0.5, 0.0]))
    assert cp[0] == pytest.approx(-0.5, abs=1e-12)
    # A point above the body (+z) appears at negative image y.
    cp = project_to_camera(cam, np.zeros(3), IDENTITY, np.array([1.0, 0.0, 0.5]))
    assert cp[1] == pytest.approx(-0.5, abs=1e-12)


def test_project_accounts_for_camera_offset():
    cam = forward_cam(offset=(0.1, 0.0, 0.0))
    cp = project_to_camera(cam, np.zeros(3), IDENTITY, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(cp, [0.0, 0.0, 0.9], atol=1e-12)


def test_project_with_vehicle_pose():
    cam = forward_cam(offset=(0.0, 0.0, 0.0))
    pos = np.array([2.0, 1.0, -0.5])
    att = quat.yaw_quat(np.pi / 2)  # body x now points along world y
    target = pos + np.array([0.0, 3.0, 0.0])
    cp = project_to_camera(cam, pos, att, target)
    np.testing.assert_allclose(cp, [0.0, 0.0, 3.0], atol=1e-12)


def test_project_inverse_recovery():
    # Reconstructing the world point from camera coordinates must invert the
    # projection for arbitrary poses and mountings.
    rng = np.random.default_rng(40)
    for _ in range(20):
        pos, att = random_pose(rng)
        cam = CameraModel(
            offset=rng.uniform(-0.2, 0.2, size=3),
            mount=quat.random_unit_quat(rng),
        )
        target = rng.uniform(-5.0, 5.0, size=3)
        cp = project_to_camera(cam, pos, att, target)
        R_wb = quat.quat_to_rot(att)
        recovered = pos + R_wb @ (cam.offset + cam.rot_bc @ cp)
        np.testing.assert_allclose(recovered, target, atol=1e-12)


# --- field of view ---------------------------------------------------------------


def test_fov_residuals_on_axis():
    cam = identity_cam(alpha_h=np.pi / 4, alpha_v=np.pi / 4)
    r_h, r_v = fov_residuals(cam, np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(np.concatenate([r_h, r_v]), np.ones(4), atol=1e-12)


def test_fov_residuals_horizontal_boundary():
    cam = identity_cam(alpha_h=np.pi / 4, alpha_v=np.pi / 4)
    r_h, _ = fov_residuals(cam, np.array([1.0, 0.0, 1.0]))
    np.testing.assert_allclose(r_h, [0.0, 2.0], atol=1e-12)


def test_fov_residuals_disabled_at_half_pi():
    cam = identity_cam()  # both apertures default to pi/2
    r_h, r_v = fov_residuals(cam, np.array([5.0, -7.0, 0.1]))
    assert r_h.size == 0 and r_v.size == 0
    assert cam.n_visibility_rows() == 1
    assert cheirality_residual(cam, np.array([0.0, 0.0, 0.1])) == pytest.approx(0.05)


def test_fov_residuals_reject_points_behind_camera():
    cam = identity_cam(alpha_h=np.pi / 4)
    with pytest.raises(ValueError, match="behind"):
        fov_residuals(cam, np.array([0.0, 0.0, -0.2]))


def test_camera_model_validation():
    with pytest.raises(ValueError, match="alpha_h"):
        identity_cam(alpha_h=0.0)
    with pytest.raises(ValueError, match="alpha_v"):
        identity_cam(alpha_v=2.0)
    with pytest.raises(ValueError, match="unit quaternion"):
        CameraModel(offset=np.zeros(3), mount=np.array([1.0, 1.0, 0.0, 0.0]))
    with pytest.raises(ValueError, match="z_min"):
        identity_cam(z_min=0.0)


# --- bearing cosine ---------------------------------------------------------------


def test_cos_beta_values():
    assert cos_beta(np.array([0.0, 0.0, 2.0])) == pytest.approx(1.0)
    assert cos_beta(np.array([1.0, 0.0, 1.0])) == pytest.approx(np.cos(np.pi / 4))
    assert cos_beta(np.array([3.0, 0.0, 4.0])) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        cos_beta(np.zeros(3))


def test_cos_beta_scale_invariant():
    rng = np.random.default_rng(41)
    for _ in range(20):
        cp = rng.uniform(-2.0, 2.0, size=3) + np.array([0.0, 0.0, 3.0])
        assert cos_beta(4.7 * cp) == pytest.approx(cos_beta(cp), rel=1e-12)


def test_cos_beta_rate_matches_time_differences():
    # Oracle: advance the exact rigid-body kinematics by +/- eps and difference
    # cos_beta; constant omega means q(t) = q * exp(t * omega / 2).
    rng = np.random.default_rng(42)
    cam = forward_cam()
    eps = 1e-5
    worst = 0.0
    for _ in range(1000):
        pos, att = random_pose(rng)
        vel = rng.uniform(-2.0, 2.0, size=3)
        omega = rng.uniform(-1.5, 1.5, size=3)
        target = pos + quat.quat_to_rot(att) @ np.array([2.5, 0.0, 0.0])
        target += rng.uniform(-0.8, 0.8, size=3)
        target_vel = rng.uniform(-1.0, 1.0, size=3)

        def cb_at(t):
            p_t = pos + t * vel
            q_t = quat.quat_mul(att, quat.quat_exp(0.5 * t * omega))
            m_t = target + t * target_vel
            return cos_beta(project_to_camera(cam, p_t, q_t, m_t))

        fd = (cb_at(eps) - cb_at(-eps)) / (2.0 * eps)
        analytic = cos_beta_rate(cam, pos, att, vel, omega, target, target_vel)
        worst = max(worst, abs(analytic - fd))
    assert worst < 1e-6


def test_camera_point_rate_matches_time_differences():
    rng = np.random.default_rng(43)
    cam = forward_cam()
    eps = 1e-6
    for _ in range(50):
        pos, att = random_pose(rng)
        vel = rng.uniform(-2.0, 2.0, size=3)
        omega = rng.uniform(-1.5, 1.5, size=3)
        target = rng.uniform(-4.0, 4.0, size=3)
        target_vel = rng.uniform(-1.0, 1.0, size=3)

        def cp_at(t):
            p_t = pos + t * vel
            q_t = quat.quat_mul(att, quat.quat_exp(0.5 * t * omega))
            return project_to_camera(cam, p_t, q_t, target + t * target_vel)

        fd = (cp_at(eps) - cp_at(-eps)) / (2.0 * eps)
        analytic = camera_point_rate(cam, pos, att, vel, omega, target, target_vel)
        np.testing.assert_allclose(analytic, fd, atol=1e-8)


# --- Jacobians ---------------------------------------------------------------------


def tangent_fd(f, pos, att, vel, omega, eps=1e-6):
    """Central differences of f(pos, att, vel, omega) through the retraction."""
    base = np.concatenate([pos, np.zeros(3), vel, omega])
    y0 = np.atleast_1d(f(pos, att, vel, omega))
    J = np.zeros((y0.size, 12))
    for j in range(12):
        d = np.zeros(12)
        d[j] = eps

        def shifted(sign):
            p = pos + sign * d[0:3]
            q = quat.quat_mul(att, quat.quat_exp(0.5 * sign * d[3:6]))
            v = vel + sign * d[6:9]
            w = omega + sign * d[9:12]
            return np.atleast_1d(f(p, q, v, w))

        J[:, j] = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps)
    return J


def test_visibility_jacobian_matches_finite_differences():
    rng = np.random.default_rng(44)
    cam = forward_cam()
    cam_narrow = forward_cam()
    cam_narrow.alpha_h = np.pi / 4
    cam_narrow.alpha_v = np.pi / 3
    for cam_k in (cam, cam_narrow):
        for _ in range(25):
            pos, att = random_pose(rng)
            # Keep the target well in front of the camera plane.
            target = pos + quat.quat_to_rot(att) @ (
                np.array([2.0, 0.0, 0.0]) + rng.uniform(-0.6, 0.6, size=3)
            )
            resid, J = visibility_constraints(cam_k, pos, att, target, with_jacobian=True)
            assert resid.shape == (cam_k.n_visibility_rows(),)

            def f(p, q, v, w):
                r, _ = visibility_constraints(cam_k, p, q, target)
                return r

            J_fd = tangent_fd(f, pos, att, np.zeros(3), np.zeros(3))[:, 0:6]
            np.testing.assert_allclose(J, J_fd, atol=1e-7)


def test_bearing_alignment_jacobian_matches_finite_differences():
    rng = np.random.default_rng(45)
    cam = forward_cam()
    for _ in range(40):
        pos, att = random_pose(rng)
        vel = rng.uniform(-2.0, 2.0, size=3)
        omega = rng.uniform(-1.5, 1.5, size=3)
        target = pos + quat.quat_to_rot(att) @ np.array([2.0, 0.3, -0.2])
        target_vel = rng.uniform(-1.0, 1.0, size=3)
        cb, cbr, J = bearing_alignment(
            cam, pos, att, vel, omega, target, target_vel, with_jacobian=True
        )
        assert cb == pytest.approx(
            cos_beta(project_to_camera(cam, pos, att, target)), abs=1e-12
        )
        assert cbr == pytest.approx(
            cos_beta_rate(cam, pos, att, vel, omega, target, target_vel), abs=1e-12
        )

        def f(p, q, v, w):
            b, br, _ = bearing_alignment(cam, p, q, v, w, target, target_vel)
            return np.array([b, br])

        J_fd = tangent_fd(f, pos, att, vel, omega)
        np.testing.assert_allclose(J, J_fd, atol=1e-6)
