"""Self-contained correctness oracles.

Everything here recomputes results by a slower independent route so the fast
implementations can be checked against it: quadratic programs by enumerating
candidate active sets, derivative code by central finite differences, and the
integrator by step-halving against a fine-step reference. The CLI ``verify``
subcommand and the test suite both run these.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .qp import QpProblem, QpSolution, _Canonical, solve_qp


@dataclass
class ReferenceSolution:
    z: np.ndarray | None
    objective: float
    feasible: bool


def enumerate_qp_solution(qp: QpProblem, tol: float = 1e-9) -> ReferenceSolution:
    """Globally solve a small strictly convex QP by brute force.

    Every subset of the one-sided constraint rows is treated as the active
    set: the equality-constrained subproblem is solved exactly, and the
    candidate is kept when it is primal feasible with nonnegative
    multipliers. The best candidate is the unique optimum; no candidate at
    all certifies infeasibility. Exponential in the row count, so only for
    small problems.
    """
    H = np.asarray(qp.H, dtype=float)
    g = np.asarray(qp.g, dtype=float)
    n = g.shape[0]
    canon = _Canonical(qp)
    n_eq = canon.A_eq.shape[0]
    best: ReferenceSolution | None = None
    for size in range(canon.m + 1):
        for subset in combinations(range(canon.m), size):
            rows = list(subset)
            A_act = np.vstack([canon.A_eq, canon.A[rows]]) if rows else canon.A_eq
            b_act = np.concatenate([canon.b_eq, canon.b[rows]]) if rows else canon.b_eq
            ma = A_act.shape[0]
            if ma > n:
                continue
            M = np.zeros((n + ma, n + ma))
            M[:n, :n] = H
            M[:n, n:] = A_act.T
            M[n:, :n] = A_act
            rhs = np.concatenate([-g, b_act])
            try:
                sol = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.linalg.norm(M @ sol - rhs, np.inf) > 1e-6 * max(
                1.0, np.linalg.norm(rhs, np.inf)
            ):
                continue
            z = sol[:n]
            # Same sign flip as in the solver's KKT system.
            lam_rows = -sol[n + n_eq:]
            if lam_rows.size and np.min(lam_rows) < -tol:
                continue
            if canon.m and np.min(canon.A @ z - canon.b) < -tol:
                continue
            if n_eq and np.linalg.norm(canon.A_eq @ z - canon.b_eq, np.inf) > tol:
                continue
            val = float(0.5 * z @ H @ z + g @ z)
            if best is None or val < best.objective:
                best = ReferenceSolution(z=z, objective=val, feasible=True)
    if best is None:
        return ReferenceSolution(z=None, objective=np.inf, feasible=False)
    return best


def random_qp(rng: np.random.Generator, force_infeasible: bool = False) -> QpProblem:
    """Draw a small strictly convex QP with a mix of constraint types.

    Constraints are placed relative to a seed point with a clear margin, so
    feasibility is never borderline; ``force_infeasible`` plants a
    contradictory pair instead.
    """
    n = int(rng.integers(1, 5))
    L = rng.normal(size=(n, n))
    H = L @ L.T + (0.5 + rng.random()) * np.eye(n)
    g = rng.normal(size=n, scale=2.0)
    z_seed = rng.normal(size=n)

    A_eq = b_eq = None
    if n >= 2 and rng.random() < 0.3:
        A_eq = rng.normal(size=(1, n))
        b_eq = A_eq @ z_seed

    m = int(rng.integers(0, 5))
    A_in = lb_in = ub_in = None
    if m:
        A_in = rng.normal(size=(m, n))
        mid = A_in @ z_seed
        lb_in = np.full(m, -np.inf)
        ub_in = np.full(m, np.inf)
        for i in range(m):
            kind = rng.integers(0, 3)
            lo_gap = 0.1 + rng.random()
            hi_gap = 0.1 + rng.random()
            if kind in (0, 2):
                lb_in[i] = mid[i] - lo_gap
            if kind in (1, 2):
                ub_in[i] = mid[i] + hi_gap
    lb = ub = None
    if rng.random() < 0.5:
        lb = z_seed - (0.1 + rng.random(n))
        ub = z_seed + (0.1 + rng.random(n))
        drop = rng.random(n) < 0.3
        lb[drop] = -np.inf
        drop = rng.random(n) < 0.3
        ub[drop] = np.inf
    if force_infeasible:
        a = rng.normal(size=n)
        a /= np.linalg.norm(a)
        extra = np.vstack([a, a])
        c = float(a @ z_seed)
        lo = np.array([c + 1.0, -np.inf])
        hi = np.array([np.inf, c - 1.0])
        if A_in is None:
            A_in, lb_in, ub_in = extra, lo, hi
        else:
            A_in = np.vstack([A_in, extra])
            lb_in = np.concatenate([lb_in, lo])
            ub_in = np.concatenate([ub_in, hi])
    return QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in,
                     lb_in=lb_in, ub_in=ub_in, lb=lb, ub=ub)


def check_qp_solver(
    n_problems: int = 500,
    seed: int = 0,
    tol_primal: float = 1e-8,
    tol_value: float = 1e-10,
) -> dict:
    """Compare the active-set solver against enumeration on random QPs.

    Returns a summary dict; ``failures`` lists the seeds of any mismatch.
    """
    rng = np.random.default_rng(seed)
    failures: list[dict] = []
    max_primal = 0.0
    max_value = 0.0
    n_infeasible = 0
    for k in range(n_problems):
        force_inf = k % 10 == 7
        qp = random_qp(rng, force_infeasible=force_inf)
        sol = solve_qp(qp)
        ref = enumerate_qp_solution(qp)
        if not ref.feasible:
            n_infeasible += 1
            if sol.status != "infeasible":
                failures.append({"index": k, "reason": "missed infeasibility"})
            continue
        if sol.status != "optimal":
            failures.append({"index": k, "reason": f"status {sol.status}"})
            continue
        dz = float(np.linalg.norm(sol.z - ref.z, np.inf))
        dv = abs(sol.objective - ref.objective)
        max_primal = max(max_primal, dz)
        max_value = max(max_value, dv)
        if dz > tol_primal or dv > tol_value:
            failures.append({"index": k, "reason": f"dz={dz:.2e} dv={dv:.2e}"})
    return {
        "n_problems": n_problems,
        "n_infeasible": n_infeasible,
        "max_primal_gap": max_primal,
        "max_value_gap": max_value,
        "failures": failures,
        "passed": not failures,
    }
