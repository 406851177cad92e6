"""Closed-loop simulation around the receding-horizon controller.

The world model is deliberately small: a constant-velocity target that
stops after a fixed duration, obstacles that are either static or follow
a ballistic arc after a launch time, and a reference generator that
places the setpoint one standoff length behind the target along the
current horizontal bearing. The loop itself is multi-rate: the plant
integrates at ``plant_dt`` with the rotor accelerations held constant
between controller updates, and the controller re-solves every
``ctrl_dt`` using fresh target and obstacle tracks.

Timestamps come from integer step counts multiplied by the step length,
so two runs of the same scenario produce identical logs bit for bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .ocp import (
    N_OUTPUTS,
    ObstacleTrack,
    OcpConfig,
    ReferencePoint,
    assemble_ocp,
    output_map,
)
from .perception import visibility_constraints
from .quat import quat_to_rot, yaw_quat
from .solver import RtiWorkspace, rti_step, shift_warm_start


@dataclass
class TargetModel:
    """Single-integrator target: constant velocity, then parked."""

    start: np.ndarray
    velocity: np.ndarray
    duration: float = 10.0

    def __post_init__(self) -> None:
        self.start = np.asarray(self.start, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.start.shape != (3,) or self.velocity.shape != (3,):
            raise ValueError("target start and velocity must be 3-vectors")
        if self.duration < 0.0:
            raise ValueError("target motion duration must be nonnegative")


def target_position(target: TargetModel, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Position and instantaneous velocity of the target at time t."""
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    moving = t < target.duration
    pos = target.start + target.velocity * min(t, target.duration)
    vel = target.velocity if moving else np.zeros(3)
    return pos, vel.copy()


@dataclass
class ObstacleModel:
    """Point obstacle, either parked or thrown on a ballistic arc."""

    start: np.ndarray
    safety_radius: float = 1.0
    mode: str = "static"
    launch_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    launch_time: float = 0.0
    gravity: float = 9.84

    def __post_init__(self) -> None:
        self.start = np.asarray(self.start, dtype=float)
        self.launch_velocity = np.asarray(self.launch_velocity, dtype=float)
        if self.mode not in ("static", "ballistic"):
            raise ValueError(f"unknown obstacle mode {self.mode!r}")
        if self.start.shape != (3,) or self.launch_velocity.shape != (3,):
            raise ValueError("obstacle start and launch velocity must be 3-vectors")
        if self.safety_radius <= 0.0:
            raise ValueError("safety radius must be positive")


def obstacle_position(obs: ObstacleModel, t: float) -> np.ndarray:
    if obs.mode == "static":
        return obs.start.copy()
    tau = max(0.0, t - obs.launch_time)
    drop = np.array([0.0, 0.0, 0.5 * obs.gravity * tau * tau])
    return obs.start + obs.launch_velocity * tau - drop


def obstacle_track_over_horizon(
    obs: ObstacleModel, t: float, horizon: int, step: float
) -> np.ndarray:
    """Sample the obstacle position at every shooting node from time t."""
    return np.array(
        [obstacle_position(obs, t + k * step) for k in range(horizon + 1)]
    )


def reference_from_target(
    standoff: float,
    target_track: np.ndarray,
    target_vel: np.ndarray,
    vehicle_pos: np.ndarray,
    prev_yaw: float,
) -> tuple[list[ReferencePoint], float]:
    """Setpoints one standoff behind the target along the current bearing.

    The horizontal bearing from the vehicle to the target is measured
    once and frozen over the horizon, so the position references follow
    the target track rigidly. If the vehicle stands (horizontally) on
    top of the target the bearing is undefined and the previous yaw is
    reused.
    """
    target_track = np.atleast_2d(np.asarray(target_track, dtype=float))
    target_vel = np.atleast_2d(np.asarray(target_vel, dtype=float))
    if target_track.shape[0] == 0:
        raise ValueError("target track must contain at least one sample")
    b = target_track[0] - np.asarray(vehicle_pos, dtype=float)
    yaw = prev_yaw if np.hypot(b[0], b[1]) < 1e-9 else float(np.arctan2(b[1], b[0]))
    bearing = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    att = yaw_quat(yaw)
    refs = [
        ReferencePoint.hold(
            pos=target_track[k] - standoff * bearing,
            att=att,
            standoff=standoff,
            vel=target_vel[k],
        )
        for k in range(target_track.shape[0])
    ]
    return refs, yaw


def approach_references(
    standoff: float,
    target_track: np.ndarray,
    target_vel: np.ndarray,
    vehicle_pos: np.ndarray,
    prev_yaw: float,
    approach_speed: float,
    step: float,
    brake_gain: float = 1.8,
) -> tuple[list[ReferencePoint], float]:
    """Setpoints that walk toward the standoff point at a bounded speed.

    A raw standoff setpoint several meters away makes the short-horizon
    controller race and overshoot; instead the references slide from the
    vehicle toward the standoff point, carrying the target's drift on
    top. The slide speed is capped at ``approach_speed`` and tapers as
    ``brake_gain`` times the remaining gap for a smooth arrival, and the
    distance references follow the same profile (demanding the standoff
    distance immediately while meters away is what makes the controller
    race). Within one step of the standoff point this reduces to
    ``reference_from_target`` exactly, so the tracking regime is
    unaffected.
    """
    refs, yaw = reference_from_target(
        standoff, target_track, target_vel, vehicle_pos, prev_yaw
    )
    base = refs[0].pos.copy()
    gap = base - np.asarray(vehicle_pos, dtype=float)
    dist = float(np.linalg.norm(gap))
    if dist <= approach_speed * step:
        return refs, yaw
    direction = gap / dist
    target_vel = np.atleast_2d(np.asarray(target_vel, dtype=float))
    vehicle_pos = np.asarray(vehicle_pos, dtype=float)
    reach = 0.0
    for k, ref in enumerate(refs):
        remaining = dist - reach
        if remaining <= 0.0:
            continue
        speed = min(approach_speed, brake_gain * remaining)
        drift = ref.pos - base
        ref.pos = vehicle_pos + direction * reach + drift
        ref.vel = direction * speed + target_vel[min(k, len(target_vel) - 1)]
        ref.target_dist = standoff + remaining
        reach += speed * step
    return refs, yaw


@dataclass
class Scenario:
    """Everything a closed-loop run needs, minus tuning of the solver."""

    ocp: OcpConfig
    target: TargetModel
    obstacles: list[ObstacleModel]
    x0: np.ndarray
    t_end: float = 10.0
    plant_dt: float = 0.001
    ctrl_dt: float = 0.015
    approach_speed: float = 6.0
    approach_gain: float = 1.8

    def __post_init__(self) -> None:
        self.x0 = np.asarray(self.x0, dtype=float)
        nx = mdl.state_dim(self.ocp.params.n_rotors)
        if self.x0.shape != (nx,):
            raise ValueError(f"initial state must have dimension {nx}")
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("initial state must be finite")
        if self.t_end <= 0.0 or self.plant_dt <= 0.0 or self.ctrl_dt <= 0.0:
            raise ValueError("durations and step lengths must be positive")
        if self.approach_speed <= 0.0:
            raise ValueError("approach speed must be positive")
        if self.approach_gain <= 0.0:
            raise ValueError("approach gain must be positive")
        if self.plant_dt > self.ctrl_dt:
            raise ValueError("plant step must not exceed the control period")
        ratio = self.ctrl_dt / self.plant_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("control period must be an integer multiple "
                             "of the plant step")

    @property
    def steps_per_ctrl(self) -> int:
        return int(round(self.ctrl_dt / self.plant_dt))


@dataclass
class SimLog:
    """Per-plant-step trajectory plus per-control-step solver records."""

    plant_t: np.ndarray        # (M+1,)
    plant_x: np.ndarray        # (M+1, nx), states at step boundaries
    plant_rate: np.ndarray     # (M, n), rotor acceleration held over each step
    ctrl_t: np.ndarray         # (C,)
    ctrl_idx: np.ndarray       # (C,) plant step index of each solve
    outputs: np.ndarray        # (C, n_outputs) measured tracking outputs
    fov_resid: np.ndarray      # (C, m) visibility residuals at the measurement
    target_dist: np.ndarray    # (C,)
    obs_dist: np.ndarray       # (C, n_obs) measured distance to each obstacle
    slack: np.ndarray          # (C, n_obs) largest planned slack, meters
    qp_iters: np.ndarray       # (C,)
    kkt_residual: np.ndarray   # (C,)
    solve_us: np.ndarray       # (C,) wall clock, not reproducible across runs
    objective: np.ndarray      # (C,)
    status: np.ndarray         # (C,) solver status strings
    degraded: np.ndarray       # (C,) bool
    vis_relaxed: np.ndarray    # (C,) bool, visibility rows dropped for recovery
    fov_rows_dropped: np.ndarray  # (C,)
    aborted: bool = False
    abort_reason: str = ""

    @property
    def speeds(self) -> np.ndarray:
        return self.plant_x[:, mdl.SPEED_START:]

    def save(self, path) -> None:
        data = dataclasses.asdict(self)
        data["aborted"] = np.array(self.aborted)
        data["abort_reason"] = np.array(self.abort_reason)
        np.savez_compressed(path, **data)

    @classmethod
    def load(cls, path) -> "SimLog":
        with np.load(path, allow_pickle=False) as f:
            fields = {k: f[k] for k in f.files}
        fields["aborted"] = bool(fields["aborted"])
        fields["abort_reason"] = str(fields["abort_reason"])
        return cls(**fields)


def run_closed_loop(
    scenario: Scenario,
    max_iter: int = 600,
    first_max_iter: int = 2000,
    init_iterations: int = 2,
) -> SimLog:
    """Simulate the scenario and log every plant and control step.

    The very first solve starts from a constant-state guess far from the
    solution, so it gets a raised iteration cap plus a few repeat solves
    of the same problem to settle the nominal trajectory before flight.
    A solver failure (degraded step) keeps the previous rotor command
    and is recorded, not fatal; a non-finite plant state aborts the run
    with the log truncated at the failure.
    """
    cfg = scenario.ocp
    params = cfg.params
    n = params.n_rotors
    n_obs = len(scenario.obstacles)
    n_steps = int(round(scenario.t_end / scenario.plant_dt))
    per = scenario.steps_per_ctrl
    n_ctrl = len(range(0, n_steps, per))

    plant_t = np.arange(n_steps + 1) * scenario.plant_dt
    plant_x = np.zeros((n_steps + 1, scenario.x0.shape[0]))
    plant_rate = np.zeros((n_steps, n))
    plant_x[0] = scenario.x0

    m_vis = cfg.camera.n_visibility_rows()
    ctrl_t = np.zeros(n_ctrl)
    ctrl_idx = np.zeros(n_ctrl, dtype=int)
    outputs = np.zeros((n_ctrl, N_OUTPUTS))
    fov_resid = np.zeros((n_ctrl, m_vis))
    target_dist = np.zeros(n_ctrl)
    obs_dist = np.zeros((n_ctrl, n_obs))
    slack = np.zeros((n_ctrl, n_obs))
    qp_iters = np.zeros(n_ctrl, dtype=int)
    kkt_residual = np.zeros(n_ctrl)
    solve_us = np.zeros(n_ctrl)
    objective = np.zeros(n_ctrl)
    status: list[str] = []
    degraded = np.zeros(n_ctrl, dtype=bool)
    vis_relaxed = np.zeros(n_ctrl, dtype=bool)
    fov_rows_dropped = np.zeros(n_ctrl, dtype=int)

    ws = RtiWorkspace.cold_start(cfg, scenario.x0)
    rate = np.zeros(n)
    r0 = quat_to_rot(scenario.x0[mdl.QUAT])
    prev_yaw = float(np.arctan2(r0[1, 0], r0[0, 0]))
    aborted = False
    abort_reason = ""
    c = 0

    for i in range(n_steps):
        if i % per == 0:
            t = plant_t[i]
            x = plant_x[i]
            tp = np.zeros((cfg.horizon + 1, 3))
            tv = np.zeros((cfg.horizon + 1, 3))
            for k in range(cfg.horizon + 1):
                tp[k], tv[k] = target_position(scenario.target, t + k * cfg.step)
            tracks = [
                ObstacleTrack(
                    obstacle_track_over_horizon(o, t, cfg.horizon, cfg.step),
                    o.safety_radius,
                )
                for o in scenario.obstacles
            ]
            step_cfg = dataclasses.replace(cfg, obstacles=tracks)
            refs, prev_yaw = approach_references(
                cfg.standoff, tp, tv, x[mdl.POS], prev_yaw,
                scenario.approach_speed, cfg.step, scenario.approach_gain,
            )
            inst = assemble_ocp(step_cfg, x, refs, tp, tv)
            if c == 0:
                res = rti_step(ws, inst, max_iter=first_max_iter)
                for _ in range(init_iterations):
                    res = rti_step(ws, inst, max_iter=first_max_iter)
            else:
                shift_warm_start(ws)
                res = rti_step(ws, inst, max_iter=max_iter)
            rate = res.rate

            y = output_map(step_cfg, x, rate, tp[0], tv[0], refs[0].att)
            outputs[c] = y.as_array()
            resid, _ = visibility_constraints(
                cfg.camera, x[mdl.POS], x[mdl.QUAT], tp[0]
            )
            fov_resid[c] = resid
            target_dist[c] = np.linalg.norm(x[mdl.POS] - tp[0])
            for j, trk in enumerate(tracks):
                obs_dist[c, j] = np.linalg.norm(x[mdl.POS] - trk.positions[0])
            if n_obs:
                slack[c] = np.sqrt(np.clip(ws.sigma, 0.0, None).max(axis=0))
            ctrl_t[c] = t
            ctrl_idx[c] = i
            qp_iters[c] = res.iterations
            kkt_residual[c] = res.kkt_residual
            solve_us[c] = res.time_seconds * 1e6
            objective[c] = res.objective
            status.append(res.status)
            degraded[c] = res.degraded
            vis_relaxed[c] = res.vis_relaxed
            fov_rows_dropped[c] = res.fov_rows_dropped
            c += 1

        plant_rate[i] = rate
        plant_x[i + 1] = mdl.rk4_step(params, plant_x[i], rate, scenario.plant_dt)
        if not np.all(np.isfinite(plant_x[i + 1])):
            aborted = True
            abort_reason = f"non-finite state after plant step {i} (t={plant_t[i + 1]:.3f} s)"
            plant_t = plant_t[: i + 2]
            plant_x = plant_x[: i + 2]
            plant_rate = plant_rate[: i + 1]
            break

    return SimLog(
        plant_t=plant_t,
        plant_x=plant_x,
        plant_rate=plant_rate,
        ctrl_t=ctrl_t[:c],
        ctrl_idx=ctrl_idx[:c],
        outputs=outputs[:c],
        fov_resid=fov_resid[:c],
        target_dist=target_dist[:c],
        obs_dist=obs_dist[:c],
        slack=slack[:c],
        qp_iters=qp_iters[:c],
        kkt_residual=kkt_residual[:c],
        solve_us=solve_us[:c],
        objective=objective[:c],
        status=np.array(status),
        degraded=degraded[:c],
        vis_relaxed=vis_relaxed[:c],
        fov_rows_dropped=fov_rows_dropped[:c],
        aborted=aborted,
        abort_reason=abort_reason,
    )
