"""Per-step optimal control problem: outputs, references, costs, constraints.

Each control period the tracking problem is posed over N shooting intervals
of length Ts. The decision variables are the shooting states, the rotor rate
controls, and one distance slack per obstacle and stage. The cost penalizes
weighted squared deviations of an output vector from its reference; the
output stacks position, the 3-vector geodesic attitude error, velocity, body
rates, the model-evaluated linear and angular accelerations, the two
bearing-centering terms (cosine of the target offset angle and its rate) and
the vehicle-to-target distance: 21 scalars in total.

Hard inequalities are rotor speed and rate boxes plus the visibility
residuals; obstacle clearance is kept in squared form,
``|p - p_o|^2 + s^2 >= radius^2`` with ``s >= 0`` and a quadratic penalty on
``s``, which stays differentiable everywhere and enters the QP as a linear
row. Accelerations are evaluated from the dynamics at the current iterate
instead of being extra decision variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .model import GtmrParams, dynamics, dynamics_jacobians
from .perception import CameraModel, bearing_alignment, visibility_constraints
from .quat import geodesic_error, quat_to_rot, so3_right_jacobian_inv, tangent_basis

# Output vector layout.
OUT_POS = slice(0, 3)
OUT_ATT = slice(3, 6)
OUT_VEL = slice(6, 9)
OUT_OMEGA = slice(9, 12)
OUT_LIN_ACC = slice(12, 15)
OUT_ANG_ACC = slice(15, 18)
OUT_COS_BETA = 18
OUT_COS_BETA_RATE = 19
OUT_TARGET_DIST = 20
N_OUTPUTS = 21


@dataclass
class Weights:
    """Diagonal tracking weights, replicated per axis for the vector blocks."""

    pos: float = 1.0
    att: float = 1.0
    vel: float = 0.1
    omega: float = 0.1
    lin_accel: float = 0.01
    ang_accel: float = 0.01
    cos_beta: float = 100.0
    cos_beta_rate: float = 100.0
    target_dist: float = 10.0
    slack: float = 1.0e4

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if value < 0.0:
                raise ValueError(f"weight {name} must be nonnegative")

    def output_weight_vector(self) -> np.ndarray:
        w = np.empty(N_OUTPUTS)
        w[OUT_POS] = self.pos
        w[OUT_ATT] = self.att
        w[OUT_VEL] = self.vel
        w[OUT_OMEGA] = self.omega
        w[OUT_LIN_ACC] = self.lin_accel
        w[OUT_ANG_ACC] = self.ang_accel
        w[OUT_COS_BETA] = self.cos_beta
        w[OUT_COS_BETA_RATE] = self.cos_beta_rate
        w[OUT_TARGET_DIST] = self.target_dist
        return w


@dataclass
class OutputVector:
    pos: np.ndarray
    att_err: np.ndarray
    vel: np.ndarray
    omega: np.ndarray
    lin_accel: np.ndarray
    ang_accel: np.ndarray
    cos_beta: float
    cos_beta_rate: float
    target_dist: float

    def as_array(self) -> np.ndarray:
        y = np.empty(N_OUTPUTS)
        y[OUT_POS] = self.pos
        y[OUT_ATT] = self.att_err
        y[OUT_VEL] = self.vel
        y[OUT_OMEGA] = self.omega
        y[OUT_LIN_ACC] = self.lin_accel
        y[OUT_ANG_ACC] = self.ang_accel
        y[OUT_COS_BETA] = self.cos_beta
        y[OUT_COS_BETA_RATE] = self.cos_beta_rate
        y[OUT_TARGET_DIST] = self.target_dist
        return y


@dataclass
class ReferencePoint:
    """Reference values for one stage; the attitude error reference is zero."""

    pos: np.ndarray
    att: np.ndarray
    vel: np.ndarray
    omega: np.ndarray
    lin_accel: np.ndarray
    ang_accel: np.ndarray
    target_dist: float
    cos_beta: float = 1.0
    cos_beta_rate: float = 0.0

    def output_array(self) -> np.ndarray:
        y = np.empty(N_OUTPUTS)
        y[OUT_POS] = self.pos
        y[OUT_ATT] = 0.0
        y[OUT_VEL] = self.vel
        y[OUT_OMEGA] = self.omega
        y[OUT_LIN_ACC] = self.lin_accel
        y[OUT_ANG_ACC] = self.ang_accel
        y[OUT_COS_BETA] = self.cos_beta
        y[OUT_COS_BETA_RATE] = self.cos_beta_rate
        y[OUT_TARGET_DIST] = self.target_dist
        return y

    @classmethod
    def hold(cls, pos, att, standoff, vel=None, **kw) -> "ReferencePoint":
        zeros = np.zeros(3)
        return cls(
            pos=np.asarray(pos, dtype=float),
            att=np.asarray(att, dtype=float),
            vel=zeros if vel is None else np.asarray(vel, dtype=float),
            omega=zeros,
            lin_accel=zeros,
            ang_accel=zeros,
            target_dist=standoff,
            **kw,
        )


@dataclass
class ObstacleTrack:
    """Predicted obstacle positions over the horizon plus its safety radius."""

    positions: np.ndarray  # (N+1, 3)
    safety_radius: float

    def __post_init__(self) -> None:
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.safety_radius <= 0.0:
            raise ValueError("safety radius must be positive")


@dataclass
class OcpConfig:
    """Static problem description shared across control steps."""

    params: GtmrParams
    camera: CameraModel
    weights: Weights = field(default_factory=Weights)
    horizon: int = 50
    step: float = 0.015
    standoff: float = 1.0
    obstacles: list[ObstacleTrack] = field(default_factory=list)
    slack_lower_bound: float = 0.0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if self.step <= 0.0:
            raise ValueError("shooting interval must be positive")
        if self.standoff <= 0.0:
            raise ValueError("standoff distance must be positive")

    @property
    def n_obstacles(self) -> int:
        return len(self.obstacles)


def output_map(
    cfg: OcpConfig,
    x: np.ndarray,
    rate: np.ndarray | None,
    target_pos: np.ndarray,
    target_vel: np.ndarray,
    att_ref: np.ndarray,
) -> OutputVector:
    """Evaluate the tracking outputs at one shooting node."""
    if rate is None:
        rate = np.zeros(cfg.params.n_rotors)
    xdot = dynamics(cfg.params, x, rate)
    cb, cbr, _ = bearing_alignment(
        cfg.camera, x[mdl.POS], x[mdl.QUAT], x[mdl.VEL], x[mdl.OMEGA],
        target_pos, target_vel,
    )
    return OutputVector(
        pos=x[mdl.POS].copy(),
        att_err=geodesic_error(x[mdl.QUAT], att_ref),
        vel=x[mdl.VEL].copy(),
        omega=x[mdl.OMEGA].copy(),
        lin_accel=xdot[mdl.VEL].copy(),
        ang_accel=xdot[mdl.OMEGA].copy(),
        cos_beta=cb,
        cos_beta_rate=cbr,
        target_dist=float(np.linalg.norm(x[mdl.POS] - target_pos)),
    )


def output_map_with_jacobian(
    cfg: OcpConfig,
    x: np.ndarray,
    rate: np.ndarray | None,
    target_pos: np.ndarray,
    target_vel: np.ndarray,
    att_ref: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Output vector and its Jacobian w.r.t. the tangent state perturbation.

    Returns (y, C) with C of shape (21, 12 + n). The accelerations reuse the
    dynamics Jacobians; none of the outputs depend on the rate input, so there
    is no feedthrough term.
    """
    n = cfg.params.n_rotors
    if rate is None:
        rate = np.zeros(n)
    q = x[mdl.QUAT]
    xdot = dynamics(cfg.params, x, rate)
    dfdx, _ = dynamics_jacobians(cfg.params, x, rate)
    G = tangent_basis(q)

    cb, cbr, J_bear = bearing_alignment(
        cfg.camera, x[mdl.POS], q, x[mdl.VEL], x[mdl.OMEGA],
        target_pos, target_vel, with_jacobian=True,
    )

    att_err = geodesic_error(q, att_ref)
    diff = x[mdl.POS] - target_pos
    dist = float(np.linalg.norm(diff))

    y = np.empty(N_OUTPUTS)
    y[OUT_POS] = x[mdl.POS]
    y[OUT_ATT] = att_err
    y[OUT_VEL] = x[mdl.VEL]
    y[OUT_OMEGA] = x[mdl.OMEGA]
    y[OUT_LIN_ACC] = xdot[mdl.VEL]
    y[OUT_ANG_ACC] = xdot[mdl.OMEGA]
    y[OUT_COS_BETA] = cb
    y[OUT_COS_BETA_RATE] = cbr
    y[OUT_TARGET_DIST] = dist

    C = np.zeros((N_OUTPUTS, 12 + n))
    C[OUT_POS, 0:3] = np.eye(3)
    # d att_err / d datt for the multiplicative perturbation q * exp(datt/2):
    # half the inverse right Jacobian at the full-angle error, rotated by the
    # reference attitude.
    C[OUT_ATT, 3:6] = 0.5 * so3_right_jacobian_inv(2.0 * att_err) @ quat_to_rot(att_ref)
    C[OUT_VEL, 6:9] = np.eye(3)
    C[OUT_OMEGA, 9:12] = np.eye(3)
    C[OUT_LIN_ACC, 3:6] = dfdx[mdl.VEL, mdl.QUAT] @ G
    C[OUT_LIN_ACC, 12:] = dfdx[mdl.VEL, mdl.SPEED_START:]
    C[OUT_ANG_ACC, 9:12] = dfdx[mdl.OMEGA, mdl.OMEGA]
    C[OUT_ANG_ACC, 12:] = dfdx[mdl.OMEGA, mdl.SPEED_START:]
    C[OUT_COS_BETA, 0:12] = J_bear[0]
    C[OUT_COS_BETA_RATE, 0:12] = J_bear[1]
    if dist > 1e-9:
        C[OUT_TARGET_DIST, 0:3] = diff / dist
    return y, C


def stage_cost(
    cfg: OcpConfig, y: OutputVector, ref: ReferencePoint, slack: np.ndarray
) -> float:
    """Weighted squared tracking error plus the quadratic slack penalty."""
    slack = np.atleast_1d(np.asarray(slack, dtype=float))
    if np.any(slack < 0.0):
        raise ValueError("slack entries must be nonnegative")
    r = y.as_array() - ref.output_array()
    w = cfg.weights.output_weight_vector()
    return float(r @ (w * r) + cfg.weights.slack * np.dot(slack, slack))


def hard_constraints(
    cfg: OcpConfig,
    x: np.ndarray,
    rate: np.ndarray | None,
    target_pos: np.ndarray,
) -> np.ndarray:
    """Stacked inequality residuals (>= 0): speed box, rate box, visibility.

    Pass ``rate=None`` at the terminal stage, where no control is attached.
    """
    p = cfg.params
    speeds = x[mdl.SPEED_START:]
    parts = [speeds - p.speed_min, p.speed_max - speeds]
    if rate is not None:
        parts.extend([rate - p.accel_min, p.accel_max - rate])
    vis, _ = visibility_constraints(cfg.camera, x[mdl.POS], x[mdl.QUAT], target_pos)
    parts.append(vis)
    return np.concatenate(parts)


def obstacle_constraints(
    cfg: OcpConfig, pos: np.ndarray, k: int, slack: np.ndarray
) -> np.ndarray:
    """Squared-form clearance residuals at stage k, one per obstacle."""
    slack = np.atleast_1d(np.asarray(slack, dtype=float))
    if np.any(slack < 0.0):
        raise ValueError("slack entries must be nonnegative")
    if slack.shape[0] != cfg.n_obstacles:
        raise ValueError("one slack entry per obstacle expected")
    out = np.empty(cfg.n_obstacles)
    for j, obs in enumerate(cfg.obstacles):
        d = pos - obs.positions[k]
        out[j] = np.dot(d, d) + slack[j] ** 2 - obs.safety_radius**2
    return out


@dataclass
class OcpInstance:
    """One control step's problem data (no iterate state lives here)."""

    cfg: OcpConfig
    x0: np.ndarray
    refs: list[ReferencePoint]
    target_pos: np.ndarray  # (N+1, 3)
    target_vel: np.ndarray  # (N+1, 3)

    @property
    def n_state_vars(self) -> int:
        return (self.cfg.horizon + 1) * mdl.state_dim(self.cfg.params.n_rotors)

    @property
    def n_control_vars(self) -> int:
        return self.cfg.horizon * self.cfg.params.n_rotors

    @property
    def n_slack_vars(self) -> int:
        return (self.cfg.horizon + 1) * self.cfg.n_obstacles


def assemble_ocp(
    cfg: OcpConfig,
    x0: np.ndarray,
    refs: list[ReferencePoint],
    target_pos: np.ndarray,
    target_vel: np.ndarray,
) -> OcpInstance:
    """Validate dimensions and bundle one control step's problem data."""
    n_nodes = cfg.horizon + 1
    x0 = np.asarray(x0, dtype=float)
    target_pos = np.atleast_2d(np.asarray(target_pos, dtype=float))
    target_vel = np.atleast_2d(np.asarray(target_vel, dtype=float))
    if x0.shape != (mdl.state_dim(cfg.params.n_rotors),):
        raise ValueError("initial state has the wrong dimension")
    if len(refs) != n_nodes:
        raise ValueError(f"expected {n_nodes} reference points, got {len(refs)}")
    if target_pos.shape != (n_nodes, 3) or target_vel.shape != (n_nodes, 3):
        raise ValueError("target track must cover every shooting node")
    for obs in cfg.obstacles:
        if obs.positions.shape != (n_nodes, 3):
            raise ValueError("obstacle tracks must cover every shooting node")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")
    return OcpInstance(
        cfg=cfg, x0=x0, refs=list(refs), target_pos=target_pos, target_vel=target_vel
    )
