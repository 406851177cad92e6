"""Condensing algebra against finite differences and the sparse formulation."""

import numpy as np
import pytest

from panmpc import model as mdl
from panmpc.ocp import ObstacleTrack, OcpConfig, ReferencePoint, assemble_ocp
from panmpc.perception import FORWARD_MOUNT, CameraModel
from panmpc.qp import solve_qp
from panmpc.quat import yaw_quat
from panmpc.solver import build_sparse_qp, condense, linearize, trajectory_cost


def make_camera(alpha=np.pi / 2):
    return CameraModel(offset=np.array([0.1, 0.0, 0.0]), mount=FORWARD_MOUNT,
                       alpha_h=alpha, alpha_v=alpha)


def make_instance(
    N=3,
    yaw=0.0,
    pos=(0.0, 0.0, 0.0),
    target_ahead=1.0,
    obstacles=(),
    alpha=np.pi / 2,
    speeds=None,
    vel=(0.0, 0.0, 0.0),
):
    """Holding pattern: vehicle at a pose, static target on the optical axis."""
    params = mdl.quad_x_params()
    cfg = OcpConfig(
        params=params, camera=make_camera(alpha), horizon=N,
        obstacles=[ObstacleTrack(np.tile(o, (N + 1, 1)), r) for o, r in obstacles],
    )
    x0 = mdl.hover_state(params, pos=pos, yaw=yaw)
    x0[mdl.VEL] = vel
    if speeds is not None:
        x0[mdl.SPEED_START:] = speeds
    fwd = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    target = np.asarray(pos) + (0.1 + target_ahead) * fwd
    ref = ReferencePoint.hold(pos=pos, att=yaw_quat(yaw), standoff=0.1 + target_ahead)
    refs = [ref] * (N + 1)
    tp = np.tile(target, (N + 1, 1))
    tv = np.zeros((N + 1, 3))
    return assemble_ocp(cfg, x0, refs, tp, tv)


def rollout(inst, u_traj, x0=None):
    cfg = inst.cfg
    x = inst.x0.copy() if x0 is None else x0.copy()
    out = [x]
    for k in range(cfg.horizon):
        x = mdl.rk4_step(cfg.params, x, u_traj[k], cfg.step)
        out.append(x)
    return np.asarray(out)


def test_prediction_matches_linear_recursion():
    rng = np.random.default_rng(1)
    inst = make_instance(N=4)
    # Cold nominal with nonzero defects and initial-state mismatch.
    x_off = inst.x0.copy()
    x_off[mdl.POS] += np.array([0.05, -0.02, 0.01])
    x_nom = np.tile(x_off, (5, 1))
    u_nom = rng.uniform(-20.0, 20.0, size=(4, 4))
    lin = linearize(inst, x_nom, u_nom)
    cqp = condense(lin)
    dU = rng.normal(size=16)
    dx = lin.dx0.copy()
    for k in range(4):
        assert np.allclose(cqp.gammas[k] + cqp.phis[k] @ dU, dx, atol=1e-12)
        dx = lin.A[k] @ dx + lin.B[k] @ dU[4 * k:4 * (k + 1)] + lin.defects[k]
    assert np.allclose(cqp.gammas[4] + cqp.phis[4] @ dU, dx, atol=1e-12)


def test_prediction_jacobian_matches_rollout_fd():
    rng = np.random.default_rng(2)
    inst = make_instance(N=3)
    u_nom = rng.uniform(-15.0, 15.0, size=(3, 4))
    x_nom = rollout(inst, u_nom)
    lin = linearize(inst, x_nom, u_nom)
    cqp = condense(lin)
    h = 1e-5
    fd = np.zeros_like(cqp.phis[3])
    for i in range(12):
        dU = np.zeros(12)
        dU[i] = h
        xp = rollout(inst, u_nom + dU.reshape(3, 4))
        xm = rollout(inst, u_nom - dU.reshape(3, 4))
        fd[:, i] = (
            mdl.state_diff(xp[3], x_nom[3]) - mdl.state_diff(xm[3], x_nom[3])
        ) / (2.0 * h)
    scale = max(1.0, np.abs(cqp.phis[3]).max())
    assert np.abs(fd - cqp.phis[3]).max() / scale < 1e-6
    # Defect-free nominal from the measured state: zero-input perturbations
    # vanish identically.
    assert np.abs(cqp.gammas).max() < 1e-12


def test_condensed_gradient_matches_cost_fd():
    rng = np.random.default_rng(3)
    inst = make_instance(N=3)
    u_nom = rng.uniform(-10.0, 10.0, size=(3, 4))
    x_nom = rollout(inst, u_nom)
    lin = linearize(inst, x_nom, u_nom)
    cqp = condense(lin)
    g = cqp.qp.g[:12]
    no_slack = np.zeros((4, 0))

    def cost(dU):
        u = u_nom + dU.reshape(3, 4)
        return trajectory_cost(inst, rollout(inst, u), u, no_slack)

    h = 1e-6
    fd = np.empty(12)
    for i in range(12):
        dU = np.zeros(12)
        dU[i] = h
        fd[i] = (cost(dU) - cost(-dU)) / (2.0 * h)
    assert np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(g)) < 1e-5


def test_gradient_vanishes_at_trim():
    inst = make_instance(N=5)
    x_nom = np.tile(inst.x0, (6, 1))
    u_nom = np.zeros((5, 4))
    lin = linearize(inst, x_nom, u_nom)
    cqp = condense(lin)
    assert np.abs(lin.defects).max() < 1e-9
    assert np.linalg.norm(cqp.qp.g[:20], np.inf) < 1e-8
    sol = solve_qp(cqp.qp)
    assert sol.status == "optimal"
    assert np.abs(sol.z[:20]).max() < 1e-8


def test_obstacle_row_matches_clearance_fd():
    rng = np.random.default_rng(4)
    inst = make_instance(N=3, obstacles=(((1.5, 0.5, 0.2), 1.0),))
    u_nom = rng.uniform(-10.0, 10.0, size=(3, 4))
    x_nom = rollout(inst, u_nom)
    lin = linearize(inst, x_nom, u_nom)
    cqp = condense(lin)
    k = 2
    row = cqp.qp.A_in[cqp.row_index[("obs", k, 0)]][:12]
    obs = inst.cfg.obstacles[0]

    def clearance(dU):
        xs = rollout(inst, u_nom + dU.reshape(3, 4))
        d = xs[k][mdl.POS] - obs.positions[k]
        return d @ d

    h = 1e-5
    fd = np.empty(12)
    for i in range(12):
        dU = np.zeros(12)
        dU[i] = h
        fd[i] = (clearance(dU) - clearance(-dU)) / (2.0 * h)
    assert np.linalg.norm(fd - row) / max(1.0, np.linalg.norm(row)) < 1e-5


def test_speed_prediction_exact_for_finite_steps():
    # Rotor speeds integrate a constant rate exactly, so their rows must be
    # exact for arbitrarily large steps, not just to first order.
    rng = np.random.default_rng(5)
    inst = make_instance(N=4)
    u_nom = rng.uniform(-20.0, 20.0, size=(4, 4))
    x_nom = np.tile(inst.x0, (5, 1))  # defects on purpose
    lin = linearize(inst, x_nom, u_nom)
    cqp = condense(lin)
    dU = rng.uniform(-50.0, 50.0, size=16)
    xs = rollout(inst, u_nom + dU.reshape(4, 4))
    sp = slice(mdl.SPEED_TAN_START, mdl.SPEED_TAN_START + 4)
    for k in range(1, 5):
        predicted = (
            x_nom[k][mdl.SPEED_START:] + cqp.gammas[k][sp] + cqp.phis[k][sp] @ dU
        )
        assert np.allclose(predicted, xs[k][mdl.SPEED_START:], atol=1e-9)


def test_condensed_and_sparse_agree_on_random_problems():
    rng = np.random.default_rng(6)
    worst_val = 0.0
    worst_z = 0.0
    for trial in range(50):
        N = int(rng.integers(1, 4))
        n_obs = int(rng.integers(0, 3))
        obstacles = tuple(
            (tuple(rng.uniform(-1.0, 3.0, size=3)), float(rng.uniform(0.3, 1.2)))
            for _ in range(n_obs)
        )
        inst = make_instance(
            N=N,
            yaw=float(rng.uniform(-np.pi, np.pi)),
            pos=tuple(rng.uniform(-1.0, 1.0, size=3)),
            obstacles=obstacles,
            vel=tuple(rng.uniform(-0.5, 0.5, size=3)),
            speeds=rng.uniform(50.0, 80.0, size=4),
        )
        u_nom = rng.uniform(-15.0, 15.0, size=(N, 4))
        x_nom = rollout(inst, u_nom)
        x_nom[0] = mdl.state_retract(
            x_nom[0], 0.01 * rng.normal(size=mdl.tangent_dim(4))
        )
        lin = linearize(inst, x_nom, u_nom)
        cqp = condense(lin)
        sq = build_sparse_qp(lin, reg=cqp.reg)
        sol_c = solve_qp(cqp.qp)
        sol_s = solve_qp(sq.qp)
        assert sol_c.status == "optimal", trial
        assert sol_s.status == "optimal", trial
        val_c = sol_c.objective + cqp.objective_offset
        val_s = sol_s.objective + sq.objective_offset
        gap = abs(val_c - val_s) / max(1.0, abs(val_c))
        worst_val = max(worst_val, gap)
        dz = np.abs(
            np.concatenate([sol_c.z[:cqp.nu] - sol_s.z[sq.u_offset:sq.s_offset],
                            sol_c.z[cqp.nu:] - sol_s.z[sq.s_offset:]])
        ).max()
        worst_z = max(worst_z, dz)
    assert worst_val < 1e-8, worst_val
    assert worst_z < 1e-6, worst_z


def test_node0_state_rows_are_omitted():
    params = mdl.quad_x_params()
    inst = make_instance(N=3, speeds=np.full(4, params.speed_max + 1e-6))
    x_nom = np.tile(inst.x0, (4, 1))
    lin = linearize(inst, x_nom, np.zeros((3, 4)))
    cqp = condense(lin)
    assert ("speed", 0, 0) not in cqp.row_index
    assert ("vis", 0, 0) not in cqp.row_index
    assert ("speed", 1, 0) in cqp.row_index
    # The measured violation is not a constraint row, so the QP stays
    # feasible and simply steers the speeds back inside the box.
    sol = solve_qp(cqp.qp)
    assert sol.status == "optimal"


def test_visibility_rows_dropped_behind_camera():
    # Yaw the vehicle away from the target: the affine visibility rows are
    # meaningless there and no bounded correction could satisfy the depth
    # row, so the node contributes no rows at all. The alignment cost is
    # what steers the camera back.
    inst = make_instance(N=3, alpha=np.pi / 4)
    x_away = mdl.hover_state(inst.cfg.params, yaw=np.pi)
    x_nom = np.tile(x_away, (4, 1))
    lin = linearize(inst, x_nom, np.zeros((3, 4)))
    assert not lin.cone_ok[1]
    cqp = condense(lin)
    assert cqp.fov_rows_dropped == 3 * 5
    assert ("vis", 1, 0) not in cqp.row_index
    assert ("vis", 1, 1) not in cqp.row_index
    # A facing trajectory keeps every row.
    x_facing = np.tile(inst.x0, (4, 1))
    lin2 = linearize(inst, x_facing, np.zeros((3, 4)))
    cqp2 = condense(lin2)
    assert cqp2.fov_rows_dropped == 0
    assert ("vis", 1, 0) in cqp2.row_index
    assert ("vis", 1, 4) in cqp2.row_index
