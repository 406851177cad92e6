"""Gauss-Newton real-time iteration for the tracking problem.

Each control period performs exactly one iteration: linearize the shooting
system around the nominal trajectory, condense the state perturbations out of
the quadratic subproblem, solve the remaining dense QP in the control moves
and obstacle slack variables, and apply the full step. Warm starts carry both
the nominal trajectory and the active set between periods, so a single
iteration per period is enough to track the optimum.

Conventions:

* State perturbations live in the tangent coordinates of ``model`` (rotation
  vector for attitude); ``state_retract`` applies a step.
* The condensed variables are ``z = [du_0 .. du_{N-1}, sigma]`` where sigma
  holds one squared-distance slack per (node, obstacle). The clearance
  constraint ``|p - o|^2 + sigma >= radius^2`` is linear in sigma, and the
  quadratic slack penalty of the stage cost is exactly linear in sigma too,
  so no linearization error enters through the soft constraint.
* Constraint rows carry stable labels ``(tag, stage, index)`` with tag one of
  "speed", "vis", "obs"; variables carry ("rate", stage, rotor) and
  ("slack", stage, obstacle). Active-set warm starts are expressed in these
  labels plus a "lo"/"hi" side.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .ocp import N_OUTPUTS, OcpInstance
from .perception import project_to_camera, visibility_constraints
from .qp import QpProblem, QpSolution, RowId, solve_qp

Label = tuple


@dataclass
class Linearization:
    """First-order model of the shooting system around a nominal trajectory."""

    inst: OcpInstance
    x_nom: np.ndarray            # (N+1, 13+n) shooting nodes
    u_nom: np.ndarray            # (N, n) nominal rotor accelerations
    dx0: np.ndarray              # measured state in tangent coords of node 0
    A: list[np.ndarray]          # per-interval tangent transition (nt, nt)
    B: list[np.ndarray]          # per-interval control sensitivity (nt, n)
    defects: np.ndarray          # (N, nt) shooting gaps in tangent coords
    C: np.ndarray                # (N+1, n_out, nt) output Jacobians
    resid: np.ndarray            # (N+1, n_out) output residuals y - y_ref
    vis_resid: list[np.ndarray]  # visibility margins per node
    vis_J: list[np.ndarray]      # their rows w.r.t. [dpos, datt]
    cone_ok: np.ndarray          # (N+1,) target in front of the camera plane


def linearize(inst: OcpInstance, x_nom: np.ndarray, u_nom: np.ndarray) -> Linearization:
    """Evaluate dynamics, output, and constraint derivatives at the nominal."""
    from .ocp import output_map_with_jacobian

    cfg = inst.cfg
    N = cfg.horizon
    n = cfg.params.n_rotors
    nt = mdl.tangent_dim(n)
    x_nom = np.asarray(x_nom, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    if x_nom.shape != (N + 1, mdl.state_dim(n)) or u_nom.shape != (N, n):
        raise ValueError("nominal trajectory has the wrong shape")

    dx0 = mdl.state_diff(inst.x0, x_nom[0])
    A: list[np.ndarray] = []
    B: list[np.ndarray] = []
    defects = np.empty((N, nt))
    for k in range(N):
        x_next, Aa, Ba = mdl.rk4_step_with_sensitivity(
            cfg.params, x_nom[k], u_nom[k], cfg.step
        )
        P = mdl.proj_matrix(x_nom[k + 1])
        A.append(P @ Aa @ mdl.lift_matrix(x_nom[k]))
        B.append(P @ Ba)
        defects[k] = mdl.state_diff(x_next, x_nom[k + 1])

    C = np.empty((N + 1, N_OUTPUTS, nt))
    resid = np.empty((N + 1, N_OUTPUTS))
    vis_resid: list[np.ndarray] = []
    vis_J: list[np.ndarray] = []
    cone_ok = np.empty(N + 1, dtype=bool)
    for k in range(N + 1):
        rate = u_nom[k] if k < N else None
        y, Ck = output_map_with_jacobian(
            cfg, x_nom[k], rate, inst.target_pos[k], inst.target_vel[k],
            inst.refs[k].att,
        )
        C[k] = Ck
        resid[k] = y - inst.refs[k].output_array()
        vr, vj = visibility_constraints(
            cfg.camera, x_nom[k][mdl.POS], x_nom[k][mdl.QUAT],
            inst.target_pos[k], with_jacobian=True,
        )
        vis_resid.append(vr)
        vis_J.append(vj)
        cp = project_to_camera(
            cfg.camera, x_nom[k][mdl.POS], x_nom[k][mdl.QUAT], inst.target_pos[k]
        )
        cone_ok[k] = cp[2] > 0.0
    return Linearization(
        inst=inst, x_nom=x_nom, u_nom=u_nom, dx0=dx0, A=A, B=B,
        defects=defects, C=C, resid=resid, vis_resid=vis_resid, vis_J=vis_J,
        cone_ok=cone_ok,
    )


@dataclass
class CondensedQp:
    """Dense QP in the control moves and slacks, plus bookkeeping."""

    qp: QpProblem
    row_labels: list[Label]
    col_labels: list[Label]
    row_index: dict[Label, int]
    col_index: dict[Label, int]
    gammas: np.ndarray           # (N+1, nt) zero-input state perturbations
    phis: list[np.ndarray]       # (nt, nu) input-to-state maps per node
    objective_offset: float      # constant dropped from the QP objective
    reg: float
    fov_rows_dropped: int
    nu: int


def condense(
    lin: Linearization, reg: float | None = None, include_vis: bool = True
) -> CondensedQp:
    """Eliminate the state perturbations from the quadratic subproblem.

    Node-0 speed and visibility rows depend only on the fixed initial state
    and are omitted; keeping them as constant rows could misreport an
    already-measured violation as infeasibility. All visibility rows are
    dropped at nodes where the target sits at or behind the camera plane:
    the affine cone rows are meaningless there, and a hard depth row the
    bounded rates cannot repair within the horizon would poison the whole
    subproblem. The alignment terms in the cost still steer the camera
    back toward the target, and the rows return once the depth is positive.
    ``include_vis=False`` omits every visibility row; used as a fallback
    when the full subproblem has no feasible point.
    """
    inst = lin.inst
    cfg = inst.cfg
    p = cfg.params
    N = cfg.horizon
    n = p.n_rotors
    nt = mdl.tangent_dim(n)
    n_obs = cfg.n_obstacles
    nu = N * n
    nz = nu + (N + 1) * n_obs

    gammas = np.empty((N + 1, nt))
    phis: list[np.ndarray] = []
    gam = lin.dx0.copy()
    phi = np.zeros((nt, nu))
    gammas[0] = gam
    phis.append(phi)
    for k in range(N):
        phi_next = lin.A[k] @ phi
        phi_next[:, k * n:(k + 1) * n] += lin.B[k]
        gam = lin.A[k] @ gam + lin.defects[k]
        gammas[k + 1] = gam
        phi = phi_next
        phis.append(phi)

    w = cfg.weights.output_weight_vector()
    E = np.empty(((N + 1) * N_OUTPUTS, nu))
    e = np.empty((N + 1) * N_OUTPUTS)
    for k in range(N + 1):
        rows = slice(k * N_OUTPUTS, (k + 1) * N_OUTPUTS)
        E[rows] = lin.C[k] @ phis[k]
        e[rows] = lin.resid[k] + lin.C[k] @ gammas[k]
    w_rep = np.tile(w, N + 1)
    WE = E * w_rep[:, None]
    H = np.zeros((nz, nz))
    H[:nu, :nu] = 2.0 * E.T @ WE
    g = np.zeros(nz)
    g[:nu] = 2.0 * WE.T @ e
    g[nu:] = cfg.weights.slack
    if reg is None:
        reg = 1e-8 * np.trace(H) / nz
    H[np.diag_indices(nz)] += reg
    offset = float(e @ (w_rep * e))

    rows: list[np.ndarray] = []
    lo: list[float] = []
    hi: list[float] = []
    labels: list[Label] = []
    sp_tan = slice(mdl.SPEED_TAN_START, mdl.SPEED_TAN_START + n)
    for k in range(1, N + 1):
        speeds = lin.x_nom[k][mdl.SPEED_START:]
        base = gammas[k][sp_tan]
        block = phis[k][sp_tan]
        for i in range(n):
            a = np.zeros(nz)
            a[:nu] = block[i]
            rows.append(a)
            lo.append(p.speed_min - speeds[i] - base[i])
            hi.append(p.speed_max - speeds[i] - base[i])
            labels.append(("speed", k, i))
    fov_dropped = 0
    for k in range(1, N + 1):
        vr = lin.vis_resid[k]
        vj = lin.vis_J[k]
        if not include_vis or not lin.cone_ok[k]:
            fov_dropped += len(vr)
            continue
        for r in range(len(vr)):
            a = np.zeros(nz)
            a[:nu] = vj[r] @ phis[k][0:6]
            rows.append(a)
            lo.append(-(vr[r] + vj[r] @ gammas[k][0:6]))
            hi.append(np.inf)
            labels.append(("vis", k, r))
    for k in range(N + 1):
        for j, obs in enumerate(cfg.obstacles):
            d = lin.x_nom[k][mdl.POS] - obs.positions[k]
            a = np.zeros(nz)
            a[:nu] = 2.0 * d @ phis[k][0:3]
            a[nu + k * n_obs + j] = 1.0
            rows.append(a)
            lo.append(obs.safety_radius**2 - d @ d - 2.0 * d @ gammas[k][0:3])
            hi.append(np.inf)
            labels.append(("obs", k, j))

    lb = np.full(nz, -np.inf)
    ub = np.full(nz, np.inf)
    col_labels: list[Label] = []
    for k in range(N):
        for i in range(n):
            c = k * n + i
            lb[c] = p.accel_min - lin.u_nom[k, i]
            ub[c] = p.accel_max - lin.u_nom[k, i]
            col_labels.append(("rate", k, i))
    for k in range(N + 1):
        for j in range(n_obs):
            lb[nu + k * n_obs + j] = cfg.slack_lower_bound
            col_labels.append(("slack", k, j))

    qp = QpProblem(
        H=H, g=g,
        A_in=np.vstack(rows) if rows else None,
        lb_in=np.asarray(lo) if rows else None,
        ub_in=np.asarray(hi) if rows else None,
        lb=lb, ub=ub,
    )
    return CondensedQp(
        qp=qp, row_labels=labels, col_labels=col_labels,
        row_index={lab: i for i, lab in enumerate(labels)},
        col_index={lab: i for i, lab in enumerate(col_labels)},
        gammas=gammas, phis=phis, objective_offset=offset, reg=float(reg),
        fov_rows_dropped=fov_dropped, nu=nu,
    )


@dataclass
class SparseQp:
    """Uncondensed QP over [dx, du, sigma] with explicit shooting equalities."""

    qp: QpProblem
    objective_offset: float
    x_offset: int
    u_offset: int
    s_offset: int


def build_sparse_qp(lin: Linearization, reg: float) -> SparseQp:
    """Assemble the same subproblem without eliminating the states.

    Regularization is applied to the control and slack variables only, which
    makes this formulation algebraically identical to ``condense`` with the
    same ``reg`` after the equalities are eliminated. Used as an independent
    cross-check of the condensing algebra.
    """
    inst = lin.inst
    cfg = inst.cfg
    p = cfg.params
    N = cfg.horizon
    n = p.n_rotors
    nt = mdl.tangent_dim(n)
    n_obs = cfg.n_obstacles
    nx = (N + 1) * nt
    nu = N * n
    ns = (N + 1) * n_obs
    nz = nx + nu + ns
    u_off = nx
    s_off = nx + nu

    w = cfg.weights.output_weight_vector()
    H = np.zeros((nz, nz))
    g = np.zeros(nz)
    offset = 0.0
    for k in range(N + 1):
        sl = slice(k * nt, (k + 1) * nt)
        Ck = lin.C[k]
        H[sl, sl] = 2.0 * Ck.T @ (w[:, None] * Ck)
        g[sl] = 2.0 * Ck.T @ (w * lin.resid[k])
        offset += float(lin.resid[k] @ (w * lin.resid[k]))
    H[np.diag_indices(nz)[0][u_off:], np.diag_indices(nz)[1][u_off:]] += reg
    g[s_off:] += cfg.weights.slack

    A_eq = np.zeros((nx, nz))
    b_eq = np.zeros(nx)
    A_eq[0:nt, 0:nt] = np.eye(nt)
    b_eq[0:nt] = lin.dx0
    for k in range(N):
        r = slice((k + 1) * nt, (k + 2) * nt)
        A_eq[r, (k + 1) * nt:(k + 2) * nt] = np.eye(nt)
        A_eq[r, k * nt:(k + 1) * nt] = -lin.A[k]
        A_eq[r, u_off + k * n:u_off + (k + 1) * n] = -lin.B[k]
        b_eq[r] = lin.defects[k]

    rows: list[np.ndarray] = []
    lo: list[float] = []
    hi: list[float] = []
    sp_tan = slice(mdl.SPEED_TAN_START, mdl.SPEED_TAN_START + n)
    for k in range(1, N + 1):
        speeds = lin.x_nom[k][mdl.SPEED_START:]
        for i in range(n):
            a = np.zeros(nz)
            a[k * nt + sp_tan.start + i] = 1.0
            rows.append(a)
            lo.append(p.speed_min - speeds[i])
            hi.append(p.speed_max - speeds[i])
    for k in range(1, N + 1):
        if not lin.cone_ok[k]:
            continue
        vr = lin.vis_resid[k]
        vj = lin.vis_J[k]
        for r in range(len(vr)):
            a = np.zeros(nz)
            a[k * nt:k * nt + 6] = vj[r]
            rows.append(a)
            lo.append(-vr[r])
            hi.append(np.inf)
    for k in range(N + 1):
        for j, obs in enumerate(cfg.obstacles):
            d = lin.x_nom[k][mdl.POS] - obs.positions[k]
            a = np.zeros(nz)
            a[k * nt:k * nt + 3] = 2.0 * d
            a[s_off + k * n_obs + j] = 1.0
            rows.append(a)
            lo.append(obs.safety_radius**2 - d @ d)
            hi.append(np.inf)

    lb = np.full(nz, -np.inf)
    ub = np.full(nz, np.inf)
    for k in range(N):
        for i in range(n):
            lb[u_off + k * n + i] = p.accel_min - lin.u_nom[k, i]
            ub[u_off + k * n + i] = p.accel_max - lin.u_nom[k, i]
    lb[s_off:] = cfg.slack_lower_bound

    qp = QpProblem(
        H=H, g=g, A_eq=A_eq, b_eq=b_eq,
        A_in=np.vstack(rows) if rows else None,
        lb_in=np.asarray(lo) if rows else None,
        ub_in=np.asarray(hi) if rows else None,
        lb=lb, ub=ub,
    )
    return SparseQp(qp=qp, objective_offset=offset, x_offset=0,
                    u_offset=u_off, s_offset=s_off)


# --- real-time iteration ------------------------------------------------------


@dataclass
class RtiWorkspace:
    """Iterate state carried across control periods."""

    x_nom: np.ndarray            # (N+1, 13+n)
    u_nom: np.ndarray            # (N, n)
    sigma: np.ndarray            # (N+1, n_obs) squared-distance slacks
    active_labels: list[Label]   # (tag, stage, index, side) warm-start set
    prev_rate: np.ndarray        # last commanded rotor acceleration

    @classmethod
    def cold_start(cls, cfg, x0: np.ndarray) -> "RtiWorkspace":
        """All nodes at the measured state, zero rates, slacks pinned at zero.

        The slack lower bounds are preseeded into the working set: with the
        linear slack penalty every free slack heads for minus infinity in the
        first equality-constrained solve, and the active-set method would
        otherwise spend one iteration per slack discovering the bounds.
        """
        N = cfg.horizon
        n = cfg.params.n_rotors
        x0 = np.asarray(x0, dtype=float)
        labels = [("slack", k, j, "lo")
                  for k in range(N + 1) for j in range(cfg.n_obstacles)]
        return cls(
            x_nom=np.tile(x0, (N + 1, 1)),
            u_nom=np.zeros((N, n)),
            sigma=np.zeros((N + 1, cfg.n_obstacles)),
            active_labels=labels,
            prev_rate=np.zeros(n),
        )


@dataclass
class RtiResult:
    """Outcome of one real-time iteration."""

    rate: np.ndarray             # rotor acceleration to apply this period
    status: str
    degraded: bool               # True when the QP failed and rate is stale
    iterations: int
    kkt_residual: float
    objective: float             # quadratic-model cost including constants
    slack_max: float             # max distance-unit slack sqrt(sigma)
    fov_rows_dropped: int
    du_norm: float               # step size in the controls
    dx_norm: float               # step size in the states (tangent)
    time_seconds: float
    vis_relaxed: bool = False    # visibility rows dropped to restore feasibility


def _warm_ids(cqp: CondensedQp, labels: list[Label]) -> list[RowId]:
    ids: list[RowId] = []
    for tag, k, idx, side in labels:
        if tag in ("rate", "slack"):
            c = cqp.col_index.get((tag, k, idx))
            if c is not None:
                ids.append(("bl" if side == "lo" else "bu", c))
        else:
            r = cqp.row_index.get((tag, k, idx))
            if r is not None:
                ids.append(("il" if side == "lo" else "iu", r))
    return ids


def _semantic_labels(cqp: CondensedQp, active: list[RowId]) -> list[Label]:
    out: list[Label] = []
    for kind, i in active:
        if kind == "il":
            out.append((*cqp.row_labels[i], "lo"))
        elif kind == "iu":
            out.append((*cqp.row_labels[i], "hi"))
        elif kind == "bl":
            out.append((*cqp.col_labels[i], "lo"))
        else:
            out.append((*cqp.col_labels[i], "hi"))
    return out


def _point_feasible(qp: QpProblem, z: np.ndarray, tol: float = 1e-8) -> bool:
    if qp.A_in is not None:
        v = qp.A_in @ z
        if np.max(qp.lb_in - v, initial=0.0) > tol:
            return False
        if np.max(v - qp.ub_in, initial=0.0) > tol:
            return False
    if qp.lb is not None and np.max(qp.lb - z, initial=0.0) > tol:
        return False
    if qp.ub is not None and np.max(z - qp.ub, initial=0.0) > tol:
        return False
    return True


def _start_point(
    ws: RtiWorkspace, cfg, cqp: CondensedQp, du_flat: np.ndarray
) -> np.ndarray:
    """Candidate start: the given moves with slacks absorbing the deficits."""
    n_obs = cfg.n_obstacles
    z = np.zeros(cqp.qp.n)
    z[:cqp.nu] = du_flat
    for k in range(cfg.horizon + 1):
        dp = cqp.gammas[k][0:3] + cqp.phis[k][0:3] @ du_flat
        for j, obs in enumerate(cfg.obstacles):
            d = ws.x_nom[k][mdl.POS] - obs.positions[k]
            deficit = obs.safety_radius**2 - d @ d - 2.0 * d @ dp
            z[cqp.nu + k * n_obs + j] = max(cfg.slack_lower_bound, deficit)
    return z


def _solve_condensed(
    ws: RtiWorkspace, cfg, cqp: CondensedQp, max_iter: int,
    allow_phase_one: bool = False,
) -> QpSolution:
    # Start candidates, cheapest first: zero moves (satisfies the hard rows
    # whenever the nominal trajectory does), then zeroed absolute rates
    # (du = -u_nom holds every rotor speed at its measured value, so rate
    # and speed rows are satisfied by construction; only visibility rows
    # can still be violated there). Slacks absorb the obstacle deficits in
    # both, so a feasibility miss always comes from the hard rows.
    z0 = _start_point(ws, cfg, cqp, np.zeros(cqp.nu))
    if not _point_feasible(cqp.qp, z0):
        z_rest = _start_point(ws, cfg, cqp, -ws.u_nom.reshape(-1))
        if _point_feasible(cqp.qp, z_rest):
            z0 = z_rest
    return solve_qp(
        cqp.qp,
        warm_active=_warm_ids(cqp, ws.active_labels),
        z_init=z0,
        max_iter=max_iter,
        allow_phase_one=allow_phase_one,
    )


def rti_step(ws: RtiWorkspace, inst: OcpInstance, max_iter: int = 200) -> RtiResult:
    """One linearize-condense-solve-update cycle.

    The full QP step is applied to the nominal trajectory (states by tangent
    retraction). If the subproblem yields no usable point (no feasible point,
    or the solver could not produce one within budget) it is re-solved once
    with every visibility row dropped: losing sight of the target for a
    period is recoverable through the alignment cost, while freezing the
    rotor command is not. If even that fails, nothing is updated and the
    previously commanded rate is returned with ``degraded`` set; the caller
    decides how long that is tolerable. This function never shifts the
    trajectory in time; call ``shift_warm_start`` once per control period.
    """
    t0 = time.perf_counter()
    cfg = inst.cfg
    N = cfg.horizon
    n = cfg.params.n_rotors
    n_obs = cfg.n_obstacles

    def usable(s: QpSolution) -> bool:
        # Budget-truncated solves still return a feasible iterate; only a
        # missing point (infeasible, or phase one ran out) is unusable.
        return bool(np.all(np.isfinite(s.z)))

    lin = linearize(inst, ws.x_nom, ws.u_nom)
    cqp = condense(lin)
    sol: QpSolution = _solve_condensed(ws, cfg, cqp, max_iter)
    vis_relaxed = False
    if not usable(sol):
        # Without visibility rows the subproblem always has a feasible
        # point (the zeroed-rates start), so this retry can only fail on
        # the iteration budget.
        relaxed = condense(lin, include_vis=False)
        sol_r = _solve_condensed(ws, cfg, relaxed, max_iter, allow_phase_one=True)
        if usable(sol_r):
            cqp = relaxed
            sol = sol_r
            vis_relaxed = True
        else:
            # The relaxed rows are a subset of the full rows, so this
            # verdict (infeasible, or truncated phase one) is the more
            # definitive of the two.
            sol = sol_r
    if not usable(sol):
        return RtiResult(
            rate=ws.prev_rate.copy(), status=sol.status, degraded=True,
            iterations=sol.iterations, kkt_residual=sol.kkt_residual,
            objective=np.inf, slack_max=np.nan,
            fov_rows_dropped=cqp.fov_rows_dropped,
            du_norm=np.nan, dx_norm=np.nan,
            time_seconds=time.perf_counter() - t0,
        )

    du = sol.z[:cqp.nu].reshape(N, n)
    sigma = sol.z[cqp.nu:].reshape(N + 1, n_obs) if n_obs else np.zeros((N + 1, 0))
    dx_norm = 0.0
    x_new = np.empty_like(ws.x_nom)
    for k in range(N + 1):
        dx_k = cqp.gammas[k] + cqp.phis[k] @ sol.z[:cqp.nu]
        dx_norm = max(dx_norm, float(np.linalg.norm(dx_k, np.inf)))
        x_new[k] = mdl.state_retract(ws.x_nom[k], dx_k)
    ws.x_nom = x_new
    ws.u_nom = ws.u_nom + du
    ws.sigma = np.clip(sigma, 0.0, None)
    ws.active_labels = _semantic_labels(cqp, sol.active_set)
    ws.prev_rate = ws.u_nom[0].copy()
    return RtiResult(
        rate=ws.u_nom[0].copy(), status=sol.status, degraded=False,
        iterations=sol.iterations, kkt_residual=sol.kkt_residual,
        objective=sol.objective + cqp.objective_offset,
        slack_max=float(np.sqrt(ws.sigma.max())) if ws.sigma.size else 0.0,
        fov_rows_dropped=cqp.fov_rows_dropped,
        du_norm=float(np.abs(du).max()) if du.size else 0.0,
        dx_norm=dx_norm,
        time_seconds=time.perf_counter() - t0,
        vis_relaxed=vis_relaxed,
    )


def shift_warm_start(ws: RtiWorkspace) -> None:
    """Advance the workspace one period: roll nominals, relabel the active set.

    The terminal node is duplicated, and active-set labels at the last valid
    stage are kept alongside their shifted copies so the new terminal stage
    inherits the old one's working set. Labels that shift off the front are
    dropped when the next solve fails to find their row.
    """
    N = ws.u_nom.shape[0]
    ws.x_nom = np.vstack([ws.x_nom[1:], ws.x_nom[-1:]])
    ws.u_nom = np.vstack([ws.u_nom[1:], ws.u_nom[-1:]])
    ws.sigma = np.vstack([ws.sigma[1:], ws.sigma[-1:]])
    shifted: set[Label] = set()
    for tag, k, idx, side in ws.active_labels:
        last = N - 1 if tag == "rate" else N
        if k - 1 >= 0:
            shifted.add((tag, k - 1, idx, side))
        if k == last:
            shifted.add((tag, k, idx, side))
    ws.active_labels = sorted(shifted)


def trajectory_cost(inst: OcpInstance, x_traj: np.ndarray, u_traj: np.ndarray,
                    sigma: np.ndarray) -> float:
    """Exact (nonquadratic) cost of a trajectory, slacks given as sigma."""
    from .ocp import output_map, stage_cost

    cfg = inst.cfg
    total = 0.0
    for k in range(cfg.horizon + 1):
        rate = u_traj[k] if k < cfg.horizon else None
        y = output_map(cfg, x_traj[k], rate, inst.target_pos[k],
                       inst.target_vel[k], inst.refs[k].att)
        s = np.sqrt(np.clip(sigma[k], 0.0, None)) if sigma.size else np.zeros(0)
        total += stage_cost(cfg, y, inst.refs[k], s)
    return total
