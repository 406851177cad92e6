"""Perception-aware nonlinear MPC and closed-loop simulation for multi-rotors.

The package is organized bottom-up:

- :mod:`panmpc.quat`: quaternion and SO(3) primitives.
- :mod:`panmpc.model`: vehicle dynamics, RK4 integration, sensitivities.
- :mod:`panmpc.perception`: camera projection, field-of-view residuals,
  bearing-alignment outputs.
- :mod:`panmpc.ocp`: tracking outputs, weights, constraint residuals and the
  per-step optimal control problem.
- :mod:`panmpc.qp`: dense primal active-set solver for strictly convex QPs.
- :mod:`panmpc.solver`: linearization, condensing and the real-time iteration.
- :mod:`panmpc.harness`: target/obstacle models, reference generation and the
  multi-rate closed-loop simulation.
- :mod:`panmpc.config` / :mod:`panmpc.cli`: scenario files and the command
  line front end.
"""

__version__ = "0.1.0"
