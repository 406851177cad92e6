"""Dense primal active-set solver for strictly convex quadratic programs.

Problems have the form

    min_z  1/2 z^T H z + g^T z
    s.t.   A_eq z = b_eq
           lb_in <= A_in z <= ub_in
           lb <= z <= ub

with H symmetric positive definite. Two-sided rows and simple bounds are
normalized internally into one-sided rows ``a^T z >= b``; every such row is
identified by a stable id ``(kind, index)`` with kind one of ``"il"``/``"iu"``
(inequality lower/upper) and ``"bl"``/``"bu"`` (bound lower/upper). Ids are
what warm starts and reported active sets are expressed in, so callers can
carry an active set across related problems.

The iteration is the textbook primal scheme: minimize over the current
working set, take the largest feasible step toward that minimizer, add the
blocking row (blocking rows are always independent of the working set), and
drop the row with the most negative multiplier when stationary. Ties are
broken toward the most violated constraint first and then by lowest row id,
which makes the solver deterministic. When no feasible starting point is
available a single elastic variable is added (phase 1) and the same loop runs
on the relaxed problem; a positive elastic optimum certifies infeasibility.
A phase-1 run that exhausts its own (size-scaled) iteration budget is not
such a certificate and is reported as ``"max_iter"`` with no point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

RowId = tuple[str, int]


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lb_in: np.ndarray | None = None
    ub_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.g.shape[0]


@dataclass
class QpSolution:
    z: np.ndarray
    status: str  # "optimal", "max_iter", "infeasible", "no_start"
    iterations: int
    active_set: list[RowId]
    kkt_residual: float
    objective: float
    lam_eq: np.ndarray
    lam: dict[RowId, float] = field(default_factory=dict)
    start: str = ""  # which start point was used: "warm", "init", "eq", "p1"


class _Canonical:
    """One-sided rows a^T z >= b with stable ids, plus the equalities."""

    def __init__(self, qp: QpProblem):
        n = qp.n
        self.n = n
        self.A_eq = np.zeros((0, n)) if qp.A_eq is None else np.atleast_2d(qp.A_eq)
        self.b_eq = np.zeros(0) if qp.b_eq is None else np.atleast_1d(qp.b_eq)
        rows: list[np.ndarray] = []
        rhs: list[float] = []
        ids: list[RowId] = []

        def add(a, b, rid):
            rows.append(a)
            rhs.append(b)
            ids.append(rid)

        if qp.A_in is not None and len(qp.A_in):
            A = np.atleast_2d(qp.A_in)
            lo = np.full(A.shape[0], -np.inf) if qp.lb_in is None else qp.lb_in
            hi = np.full(A.shape[0], np.inf) if qp.ub_in is None else qp.ub_in
            for i in range(A.shape[0]):
                if np.isfinite(lo[i]):
                    add(A[i], lo[i], ("il", i))
                if np.isfinite(hi[i]):
                    add(-A[i], -hi[i], ("iu", i))
        if qp.lb is not None:
            for j in range(n):
                if np.isfinite(qp.lb[j]):
                    e = np.zeros(n)
                    e[j] = 1.0
                    add(e, qp.lb[j], ("bl", j))
        if qp.ub is not None:
            for j in range(n):
                if np.isfinite(qp.ub[j]):
                    e = np.zeros(n)
                    e[j] = -1.0
                    add(e, -qp.ub[j], ("bu", j))
        self.A = np.vstack(rows) if rows else np.zeros((0, n))
        self.b = np.asarray(rhs)
        self.ids = ids
        self.id_to_row = {rid: i for i, rid in enumerate(ids)}

    @property
    def m(self) -> int:
        return self.A.shape[0]


def _sort_key(canon: _Canonical, row: int):
    # Lexicographic on the id tuple: a fixed total order for tie-breaking.
    return canon.ids[row]


def _kkt_solve(H, g_vec, A_act, b_act):
    """Solve the equality-constrained QP min 1/2 z'Hz + g'z s.t. A_act z = b_act.

    Returns (z, lam) with the sign convention H z + g = A_act^T lam, so lam
    is nonnegative at an optimum where the rows are ``a^T z >= b``
    constraints. A numerically singular KKT matrix (dependent working set)
    is re-solved with tiny primal and dual regularization, which keeps the
    system nonsingular and the iteration going deterministically at plain
    LU cost.
    """
    n = H.shape[0]
    ma = A_act.shape[0]
    if ma == 0:
        return np.linalg.solve(H, -g_vec), np.zeros(0)
    M = np.zeros((n + ma, n + ma))
    M[:n, :n] = H
    M[:n, n:] = A_act.T
    M[n:, :n] = A_act
    rhs = np.concatenate([-g_vec, b_act])
    try:
        sol = np.linalg.solve(M, rhs)
        bad = not np.all(np.isfinite(sol))
        if not bad:
            err = np.max(np.abs(M @ sol - rhs))
            bad = err > 1e-7 * max(1.0, np.max(np.abs(rhs)), np.max(np.abs(sol)))
    except np.linalg.LinAlgError:
        bad = True
    if bad:
        reg = 1e-11 * max(1.0, float(np.abs(H).max()))
        idx = np.arange(n + ma)
        M[idx[:n], idx[:n]] += reg
        M[idx[n:], idx[n:]] -= reg
        sol = np.linalg.solve(M, rhs)
    # The symmetric system carries the negated multiplier.
    return sol[:n], -sol[n:]


def _active_rows_matrix(canon: _Canonical, working: list[int]):
    if working:
        A_act = np.vstack([canon.A_eq, canon.A[working]])
        b_act = np.concatenate([canon.b_eq, canon.b[working]])
    else:
        A_act, b_act = canon.A_eq, canon.b_eq
    return A_act, b_act


class _EqpSolver:
    """Equality-constrained solves with the Hessian factored once.

    The KKT system is reduced through the Schur complement S = A H^-1 A^T.
    The H^-1 a_i columns are cached per row, and S together with its
    Cholesky factor is carried between calls: the usual one-row working-set
    change costs one new S column plus one triangular solve (append) or a
    trailing-block refactor (removal) instead of factoring S from scratch.
    Falls back to the one-shot KKT solve when H is not positive definite
    (or too ill-conditioned for the reduction) or S is singular (dependent
    working set), which keeps the behavior of the plain method.
    """

    def __init__(self, H: np.ndarray, g_vec: np.ndarray, canon: _Canonical):
        self.H = H
        self.g = g_vec
        self.canon = canon
        try:
            self.cho = cho_factor(H, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            self.cho = None
        if self.cho is not None:
            # The factor diagonal gives a cheap condition estimate. A
            # near-singular H makes the Schur multipliers noisy enough to
            # flip signs around zero, which can cycle the outer loop; the
            # dense KKT solve stays well posed there because the active
            # rows constrain the near-null directions.
            diag = np.abs(np.diag(self.cho[0]))
            if diag.min() <= 0.0 or (diag.max() / diag.min()) ** 2 > 1e11:
                self.cho = None
        if self.cho is not None:
            self.hg = cho_solve(self.cho, g_vec, check_finite=False)
        self._ycache: dict[object, np.ndarray] = {}
        # Capacity buffers for the working rows; the usual mutation is one
        # append or one removal per iteration, so views into these avoid
        # reassembling A, Y, S and the S factor from scratch each time.
        self._keys: list = []
        cap = 8
        n = canon.n
        self._A = np.empty((cap, n))
        self._b = np.empty(cap)
        self._Yb = np.empty((n, cap))
        self._Sb = np.empty((cap, cap))
        self._Lb = np.empty((cap, cap))
        self._lok = False
        self._lage = 0
        self._last: tuple | None = None

    def _column(self, key, row):
        y = self._ycache.get(key)
        if y is None:
            y = cho_solve(self.cho, row, check_finite=False)
            self._ycache[key] = y
        return y

    def _grow(self, need: int):
        cap = self._Sb.shape[0]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        n = self.canon.n
        ma = len(self._keys)
        A = np.empty((cap, n)); A[:ma] = self._A[:ma]; self._A = A
        b = np.empty(cap); b[:ma] = self._b[:ma]; self._b = b
        Y = np.empty((n, cap)); Y[:, :ma] = self._Yb[:, :ma]; self._Yb = Y
        S = np.empty((cap, cap)); S[:ma, :ma] = self._Sb[:ma, :ma]; self._Sb = S
        L = np.empty((cap, cap)); L[:ma, :ma] = self._Lb[:ma, :ma]; self._Lb = L

    def _append_row(self, key, row, rhs):
        ma = len(self._keys)
        self._grow(ma + 1)
        y = self._column(key, row)
        self._A[ma] = row
        self._b[ma] = rhs
        self._Yb[:, ma] = y
        col = self._A[:ma + 1] @ y
        self._Sb[:ma + 1, ma] = col
        self._Sb[ma, :ma + 1] = col
        if self._lok:
            # Grow the factor by one row: L w = c, then the new diagonal.
            dd = float(col[ma])
            if ma == 0:
                if dd > 0.0:
                    self._Lb[0, 0] = math.sqrt(dd)
                else:
                    self._lok = False
            else:
                w = solve_triangular(self._Lb[:ma, :ma], col[:ma],
                                     lower=True, check_finite=False)
                t = dd - float(w @ w)
                if t > 1e-12 * max(1.0, dd):
                    self._Lb[ma, :ma] = w
                    self._Lb[ma, ma] = math.sqrt(t)
                else:
                    self._lok = False
            self._lage += 1
        self._keys.append(key)

    def _drop_row(self, pos: int):
        ma = len(self._keys)
        k = ma - 1 - pos
        new_tail = None
        if self._lok and k > 0:
            # Removing row/col ``pos`` of S keeps the factor's leading
            # blocks; the trailing k-by-k block absorbs the removed
            # column's contribution. Rebuild it from whichever expression
            # is cheaper at this position.
            l32 = self._Lb[pos + 1:ma, pos].copy()
            if k <= pos:
                L33 = np.tril(self._Lb[pos + 1:ma, pos + 1:ma])
                T = L33 @ L33.T
                T += np.outer(l32, l32)
            else:
                L31 = self._Lb[pos + 1:ma, :pos]
                T = self._Sb[pos + 1:ma, pos + 1:ma] - L31 @ L31.T
            try:
                new_tail = np.linalg.cholesky(T)
            except np.linalg.LinAlgError:
                self._lok = False
        self._A[pos:ma - 1] = self._A[pos + 1:ma]
        self._b[pos:ma - 1] = self._b[pos + 1:ma]
        self._Yb[:, pos:ma - 1] = self._Yb[:, pos + 1:ma]
        self._Sb[:ma, pos:ma - 1] = self._Sb[:ma, pos + 1:ma]
        self._Sb[pos:ma - 1, :ma - 1] = self._Sb[pos + 1:ma, :ma - 1]
        if self._lok and k > 0:
            self._Lb[pos:ma - 1, :pos] = self._Lb[pos + 1:ma, :pos]
            self._Lb[pos:ma - 1, pos:ma - 1] = new_tail
        if self._lok:
            self._lage += 1
        del self._keys[pos]

    def _sync(self, keys):
        """Bring the buffers in line with ``keys`` (one change is cheap)."""
        if keys == self._keys:
            return
        canon = self.canon

        def row_of(key):
            if isinstance(key, tuple):
                i = key[1]
                return canon.A_eq[i], canon.b_eq[i]
            return canon.A[key], canon.b[key]

        old = self._keys
        if len(keys) == len(old) + 1 and keys[:-1] == old:
            self._append_row(keys[-1], *row_of(keys[-1]))
            return
        if len(keys) == len(old) - 1:
            for pos in range(len(keys)):
                if keys[pos] != old[pos]:
                    break
            else:
                pos = len(keys)
            if old[:pos] + old[pos + 1:] == keys:
                self._drop_row(pos)
                return
        # General rebuild (first call or a reseeded working set).
        self._keys = []
        self._lok = False
        self._grow(len(keys))
        for key in keys:
            self._append_row(key, *row_of(key))

    def solve(self, working: list[int], refine: bool = False):
        if self.cho is None:
            A_act, b_act = _active_rows_matrix(self.canon, working)
            return _kkt_solve(self.H, self.g, A_act, b_act)
        n_eq = self.canon.A_eq.shape[0]
        if n_eq == 0 and not working:
            return -self.hg.copy(), np.zeros(0)
        keys = [("eq", i) for i in range(n_eq)] + list(working)
        self._sync(keys)
        ma = len(keys)
        A_act = self._A[:ma]
        b_act = self._b[:ma]
        Y = self._Yb[:, :ma]
        # Refresh the incrementally maintained factor before rounding from
        # many single-row updates can accumulate.
        if self._lage > 512:
            self._lok = False
        if not self._lok:
            try:
                fresh = cho_factor(self._Sb[:ma, :ma], lower=True,
                                   check_finite=False)
            except np.linalg.LinAlgError:
                return _kkt_solve(self.H, self.g, A_act, b_act)
            self._Lb[:ma, :ma] = fresh[0]
            self._lok = True
            self._lage = 0
        s_cho = (self._Lb[:ma, :ma], True)
        if self._last is not None and self._last[0] == keys:
            # Repeat solve for an unchanged working set (the refinement
            # re-solve, or the iteration after stepping onto the subspace
            # minimizer): the base point is already known.
            lam, z_new = self._last[1], self._last[2]
        else:
            lam = cho_solve(s_cho, b_act + A_act @ self.hg, check_finite=False)
            z_new = Y @ lam - self.hg
            self._last = (list(keys), lam, z_new)
        if refine:
            # One refinement pass on the full KKT residual. Without it the
            # multiplier noise near zero flips signs and the outer loop can
            # cycle a row in and out forever; it only matters where the
            # signs are inspected, so the caller asks for it at stationary
            # points.
            r_stat = self.H @ z_new + self.g - A_act.T @ lam
            r_feas = A_act @ z_new - b_act
            hr = cho_solve(self.cho, r_stat, check_finite=False)
            dl = cho_solve(s_cho, A_act @ hr - r_feas, check_finite=False)
            z_new = z_new + (Y @ dl - hr)
            lam = lam + dl
        # A dependent working set makes S near-singular and the "solution"
        # drifts off the active rows; the outer loop never checks those
        # rows again, so verify here and fall back.
        resid = np.max(np.abs(A_act @ z_new - b_act), initial=0.0)
        scale = max(1.0, np.max(np.abs(b_act), initial=0.0),
                    np.max(np.abs(z_new), initial=0.0))
        if not np.isfinite(resid) or resid > 1e-7 * scale:
            return _kkt_solve(self.H, self.g, A_act, b_act)
        return z_new, lam


def _independent_subset(canon: _Canonical, rows: list[int]) -> list[int]:
    """Greedily keep rows that stay linearly independent of the equalities.

    One QR factorization of the stacked rows (transposed) identifies, for
    each row in order, whether it lies in the span of the equalities and the
    rows kept before it: the corresponding diagonal of R is the norm of the
    orthogonal remainder.
    """
    if not rows:
        return []
    n_eq = canon.A_eq.shape[0]
    stacked = np.vstack([canon.A_eq, canon.A[rows]]) if n_eq else canon.A[rows]
    k = min(stacked.shape)
    R = np.linalg.qr(stacked.T, mode="r")
    diag = np.abs(np.diag(R))
    kept: list[int] = []
    for j, r in enumerate(rows):
        col = n_eq + j
        norm = np.linalg.norm(canon.A[r])
        if col < k and diag[col] > 1e-10 * max(1.0, norm):
            kept.append(r)
    return kept


def _primal_loop(eqp: _EqpSolver, z, working, max_iter, tol_feas, tol_dual):
    """Active-set iteration from a feasible point. Returns (z, working, iters, status)."""
    canon = eqp.canon
    n_eq = canon.A_eq.shape[0]
    it = 0
    slack = canon.A @ z - canon.b if canon.m else None
    age = 0
    while it < max_iter:
        it += 1
        z_new, lam = eqp.solve(working)
        d = z_new - z
        step_scale = max(1.0, np.linalg.norm(z))
        if np.linalg.norm(d, np.inf) <= 1e-9 * step_scale:
            # At (or within solver noise of) the subspace minimizer: redo
            # the solve with a refinement pass so the multiplier signs are
            # trustworthy, and decide from there.
            z_new, lam = eqp.solve(working, refine=True)
            lam_w = lam[n_eq:]
            if lam_w.size == 0 or np.min(lam_w) >= -tol_dual:
                return z_new, working, it, "optimal"
            # Drop the most negative multiplier, lowest id on ties.
            worst = np.min(lam_w)
            cand = [w for k, w in enumerate(working) if lam_w[k] <= worst + 1e-12]
            drop = min(cand, key=lambda r: _sort_key(canon, r))
            working.remove(drop)
            continue
        # Largest step toward z_new that stays feasible for the other rows.
        alpha = 1.0
        blocking = -1
        if canon.m:
            Ad = canon.A @ d
            mask = np.ones(canon.m, dtype=bool)
            mask[working] = False
            desc = mask & (Ad < -1e-13 * np.maximum(1.0, np.abs(slack)))
            idx = np.nonzero(desc)[0]
            if idx.size:
                steps = np.maximum(slack[idx], 0.0) / (-Ad[idx])
                a_min = float(steps.min())
                if a_min < alpha - 1e-12:
                    # Tie window: prefer the row violated fastest, then
                    # lowest id.
                    near = idx[steps <= a_min + 1e-12]
                    rate_min = float(Ad[near].min())
                    cand = near[Ad[near] <= rate_min + 1e-12]
                    blocking = min(
                        (int(i) for i in cand), key=lambda r: _sort_key(canon, r)
                    )
                    alpha = a_min
        z = z + alpha * d
        if canon.m:
            # The step changes every slack by alpha * Ad; recompute from
            # scratch periodically so the cheap update cannot drift.
            age += 1
            if age >= 64:
                slack = canon.A @ z - canon.b
                age = 0
            else:
                slack = slack + alpha * Ad
        if blocking >= 0 and alpha < 1.0:
            working.append(blocking)
    return z, working, it, "max_iter"


def _phase_one(canon: _Canonical, z0: np.ndarray, max_iter: int, tol_feas: float):
    """Find a feasible point by minimizing one elastic violation variable.

    Returns (z, status) with status "ok", "infeasible", or "max_iter". The
    elastic subproblem gets its own iteration budget scaled with the row
    count, and a truncated run is reported as such rather than as an
    infeasibility certificate. Working sets from the original problem are
    deliberately not carried in: they rarely match the elastic geometry and
    each mismatched row costs a drop iteration.
    """
    n = canon.n
    viol = canon.b - canon.A @ z0 if canon.m else np.zeros(0)
    t0 = max(0.0, viol.max() if viol.size else 0.0) + 1.0
    eps = 1e-4
    H1 = np.zeros((n + 1, n + 1))
    H1[:n, :n] = eps * np.eye(n)
    H1[n, n] = eps
    g1 = np.zeros(n + 1)
    g1[:n] = -eps * z0
    g1[n] = 1.0

    aug = _Canonical.__new__(_Canonical)
    aug.n = n + 1
    aug.A_eq = np.hstack([canon.A_eq, np.zeros((canon.A_eq.shape[0], 1))])
    aug.b_eq = canon.b_eq
    rows = np.hstack([canon.A, np.ones((canon.m, 1))]) if canon.m else np.zeros((0, n + 1))
    t_row = np.zeros((1, n + 1))
    t_row[0, n] = 1.0
    aug.A = np.vstack([rows, t_row])
    aug.b = np.concatenate([canon.b, [0.0]])
    aug.ids = list(canon.ids) + [("bl", n)]
    aug.id_to_row = {rid: i for i, rid in enumerate(aug.ids)}

    z_aug = np.concatenate([z0, [t0]])
    budget = max(2 * max_iter, canon.m + 200)
    z_aug, _, _, status = _primal_loop(
        _EqpSolver(H1, g1, aug), z_aug, [], budget, tol_feas, tol_feas
    )
    t_star = z_aug[n]
    if status == "max_iter":
        return z0, "max_iter"
    if t_star > 10.0 * tol_feas + 1e-12:
        return z0, "infeasible"
    return z_aug[:n], "ok"


def _kkt_residual(H, g_vec, canon, z, lam_eq, lam_rows, working):
    stat = H @ z + g_vec
    if canon.A_eq.shape[0]:
        stat -= canon.A_eq.T @ lam_eq
    comp = 0.0
    for k, r in enumerate(working):
        stat -= lam_rows[k] * canon.A[r]
        comp = max(comp, abs(lam_rows[k] * (canon.A[r] @ z - canon.b[r])))
    feas = 0.0
    if canon.m:
        feas = max(feas, float(np.max(canon.b - canon.A @ z, initial=0.0)))
    if canon.A_eq.shape[0]:
        feas = max(feas, float(np.max(np.abs(canon.A_eq @ z - canon.b_eq))))
    dual = float(max(0.0, -np.min(lam_rows, initial=0.0)))
    return max(float(np.linalg.norm(stat, np.inf)), feas, comp, dual)


def solve_qp(
    qp: QpProblem,
    warm_active: list[RowId] | None = None,
    z_init: np.ndarray | None = None,
    max_iter: int = 200,
    tol_feas: float = 1e-9,
    tol_dual: float = 1e-9,
    check_convexity: bool = False,
    allow_phase_one: bool = True,
) -> QpSolution:
    """Solve a strictly convex QP with a primal active-set method.

    ``warm_active`` seeds the working set with row ids from a related solve;
    with the optimal active set the method finishes in at most one iteration,
    and the set is kept as the initial working set even when its equality
    point is infeasible and the run starts elsewhere. ``check_convexity``
    additionally verifies positive definiteness of H up front (used by the
    debug paths; factorization failures surface anyway).

    Status "max_iter" with a finite ``z`` means the main loop was truncated
    at a feasible iterate; with a NaN ``z`` it means phase 1 ran out of
    budget before settling feasibility either way. With
    ``allow_phase_one=False`` a problem with no feasible start among the
    warm point, ``z_init`` and the equality point returns status
    "no_start" immediately; callers with their own fallback use this to
    keep the worst-case solve time bounded.
    """
    H = np.asarray(qp.H, dtype=float)
    g_vec = np.asarray(qp.g, dtype=float)
    n = g_vec.shape[0]
    if H.shape != (n, n):
        raise ValueError("H/g dimension mismatch")
    if np.linalg.norm(H - H.T, np.inf) > 1e-8 * max(1.0, np.linalg.norm(H, np.inf)):
        raise ValueError("H must be symmetric")
    if check_convexity:
        try:
            np.linalg.cholesky(H + 0.0 * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise ValueError("H must be positive definite") from exc

    canon = _Canonical(qp)

    # Equalities: a particular solution, or a certificate of inconsistency.
    if canon.A_eq.shape[0]:
        z_eq, *_ = np.linalg.lstsq(canon.A_eq, canon.b_eq, rcond=None)
        if np.linalg.norm(canon.A_eq @ z_eq - canon.b_eq, np.inf) > 1e-8 * max(
            1.0, np.linalg.norm(canon.b_eq, np.inf)
        ):
            return QpSolution(
                z=np.full(n, np.nan), status="infeasible", iterations=0,
                active_set=[], kkt_residual=np.inf, objective=np.inf,
                lam_eq=np.zeros(canon.A_eq.shape[0]),
            )
    else:
        z_eq = np.zeros(n)

    def is_feasible(z):
        if canon.m and np.min(canon.A @ z - canon.b) < -tol_feas * 10.0:
            return False
        if canon.A_eq.shape[0] and np.linalg.norm(
            canon.A_eq @ z - canon.b_eq, np.inf
        ) > 1e-7 * max(1.0, np.linalg.norm(canon.b_eq, np.inf)):
            return False
        return True

    eqp = _EqpSolver(H, g_vec, canon)
    z = None
    start = ""
    working: list[int] = []
    warm_rows: list[int] = []
    if warm_active:
        rows = [canon.id_to_row[rid] for rid in warm_active if rid in canon.id_to_row]
        warm_rows = _independent_subset(
            canon, sorted(rows, key=lambda r: _sort_key(canon, r))
        )
        if warm_rows:
            # The warm point (the minimizer over the carried set) is often
            # infeasible only on a handful of rows after the problem data
            # moved. Folding all violated rows in at once and re-solving,
            # a few rounds at most, repairs it in a handful of equality
            # solves; discovering the same rows inside the main loop would
            # cost one blocking iteration each.
            n_eq = canon.A_eq.shape[0]
            W = list(warm_rows)
            z_try, lam_try = eqp.solve(W)
            prev_worst = -np.inf
            for _ in range(12):
                slack = canon.A @ z_try - canon.b
                if slack.size == 0 or slack.min() >= -10.0 * tol_feas:
                    break
                worst_now = float(slack.min())
                if worst_now < prev_worst - 1e-12:
                    # Getting worse: the set has overfilled toward a pinned
                    # vertex. Hand off to the main loop instead.
                    break
                prev_worst = worst_now
                in_w = set(W)
                viol = [int(i) for i in np.nonzero(slack < -10.0 * tol_feas)[0]
                        if int(i) not in in_w]
                if not viol:
                    # Only working-row residual noise left; one refinement
                    # pass clears it.
                    z_try, lam_try = eqp.solve(W, refine=True)
                    break
                merged = sorted(set(W) | set(viol),
                                key=lambda r: _sort_key(canon, r))
                W2 = _independent_subset(canon, merged)
                if W2 != W:
                    W = W2
                    z_try, lam_try = eqp.solve(W)
                    continue
                # Every violated row left is dependent on the current set,
                # so one of its expansion rows has to leave before it can
                # enter (e.g. a speed row blocked by the previous node's
                # speed row plus a pinned rate bound). Among expansion
                # coefficients > 0 drop the row with the smallest
                # multiplier-to-coefficient ratio, the dual method's
                # exchange rule.
                r_in = min(viol, key=lambda r: (slack[r], _sort_key(canon, r)))
                A_w = canon.A[W]
                mu, *_ = np.linalg.lstsq(A_w.T, canon.A[r_in], rcond=None)
                if np.linalg.norm(A_w.T @ mu - canon.A[r_in], np.inf) > 1e-6:
                    break
                lam_w = lam_try[n_eq:]
                pos = [k for k in range(len(W)) if mu[k] > 1e-9]
                if not pos:
                    break
                ratio = min(lam_w[k] / mu[k] for k in pos)
                cand = [W[k] for k in pos if lam_w[k] / mu[k] <= ratio + 1e-12]
                W.remove(min(cand, key=lambda r: _sort_key(canon, r)))
                W = sorted(set(W) | {r_in}, key=lambda r: _sort_key(canon, r))
                z_try, lam_try = eqp.solve(W)
            if is_feasible(z_try):
                z, working, start = z_try, W, "warm"
    if z is None and z_init is not None and is_feasible(z_init):
        z = z_init.astype(float).copy()
        start = "init"
    if z is None and is_feasible(z_eq):
        z = z_eq.copy()
        start = "eq"
    if z is None:
        if not allow_phase_one:
            return QpSolution(
                z=np.full(n, np.nan), status="no_start", iterations=0,
                active_set=[], kkt_residual=np.inf, objective=np.inf,
                lam_eq=np.zeros(canon.A_eq.shape[0]),
            )
        z_start = z_eq if z_init is None else z_init.astype(float)
        z_p1, status1 = _phase_one(canon, z_start, max_iter, tol_feas)
        if status1 != "ok":
            return QpSolution(
                z=np.full(n, np.nan), status=status1, iterations=0,
                active_set=[], kkt_residual=np.inf, objective=np.inf,
                lam_eq=np.zeros(canon.A_eq.shape[0]),
            )
        z = z_p1
        start = "p1"
    if not working and canon.m:
        if warm_rows:
            # The warm equality point was infeasible beyond repair, but the
            # set itself is still one solve old and largely correct; keeping
            # it as the working set from the fallback start costs a blocking
            # iteration per genuinely new row instead of one per carried row.
            working = list(warm_rows)
        else:
            # Cold: seed with the rows active at the starting point; every
            # constraint the start sits on would otherwise cost one
            # iteration to rediscover. Rows the iterate does not sit on are
            # deliberately not invented here: such a row drags the
            # subproblem minimizer toward a far-off equality, and shedding
            # it needs a stationary point first.
            slack = canon.A @ z - canon.b
            act = [int(i) for i in np.nonzero(np.abs(slack) <= 100.0 * tol_feas)[0]]
            working = _independent_subset(
                canon, sorted(act, key=lambda r: _sort_key(canon, r))
            )

    z, working, iters, status = _primal_loop(
        eqp, z, working, max_iter, tol_feas, tol_dual
    )

    # Recover multipliers on the final working set (with one refinement pass).
    A_act, b_act = _active_rows_matrix(canon, working)
    n_eq = canon.A_eq.shape[0]
    z_fin, lam = _kkt_solve(H, g_vec, A_act, b_act)
    if status == "optimal":
        z = z_fin
        if A_act.shape[0]:
            M = np.zeros((n + A_act.shape[0],) * 2)
            M[:n, :n] = H
            M[:n, n:] = A_act.T
            M[n:, :n] = A_act
            rhs = np.concatenate([-g_vec, b_act])
            sol = np.concatenate([z, -lam])
            try:
                sol = sol + np.linalg.solve(M, rhs - M @ sol)
                z, lam = sol[:n], -sol[n:]
            except np.linalg.LinAlgError:
                pass
    lam_eq = lam[:n_eq]
    lam_rows = lam[n_eq:]
    kkt = _kkt_residual(H, g_vec, canon, z, lam_eq, lam_rows, working)
    order = sorted(range(len(working)), key=lambda k: _sort_key(canon, working[k]))
    active_ids = [canon.ids[working[k]] for k in order]
    lam_map = {canon.ids[working[k]]: float(lam_rows[k]) for k in range(len(working))}
    return QpSolution(
        z=z,
        status=status,
        iterations=iters,
        active_set=active_ids,
        kkt_residual=kkt,
        objective=float(0.5 * z @ H @ z + g_vec @ z),
        lam_eq=lam_eq,
        lam=lam_map,
        start=start,
    )
