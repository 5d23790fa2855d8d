"""Bounded-variable revised simplex (dense basis), the built-in reference LP solver.

Meant for desk-scale problems (a few hundred rows): the basis is refactored
with a dense LU every iteration. Large programs go through the HiGHS backend.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .problem import INF, LpProblem, LpSolution, LpStatus

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11
# consecutive degenerate pivots before switching to Bland's rule
DEGENERATE_SWITCH = 50


def presolve(problem: LpProblem):
    """Drop empty and duplicate rows, fix empty columns.

    Returns ``(reduced, keep_cols, fixed_values)`` or a terminal LpSolution
    when presolve alone decides infeasibility/unboundedness.
    """
    A = problem.A.tocsr()
    lo, up = problem.row_lower.copy(), problem.row_upper.copy()
    m, n = A.shape

    keep_rows = []
    seen: dict[tuple, int] = {}
    for r in range(m):
        start, end = A.indptr[r], A.indptr[r + 1]
        cols = A.indices[start:end]
        vals = A.data[start:end]
        nz = vals != 0
        cols, vals = cols[nz], vals[nz]
        if cols.size == 0:
            if lo[r] > FEAS_TOL or up[r] < -FEAS_TOL:
                return _terminal(problem, LpStatus.INFEASIBLE, f"empty row {r} cannot meet its bounds")
            continue
        order = np.argsort(cols)
        key = (tuple(cols[order]), tuple(vals[order]))
        if key in seen:
            first = seen[key]
            lo[first] = max(lo[first], lo[r])
            up[first] = min(up[first], up[r])
            if lo[first] > up[first] + FEAS_TOL:
                return _terminal(problem, LpStatus.INFEASIBLE, f"duplicate rows {first} and {r} conflict")
            continue
        seen[key] = r
        keep_rows.append(r)

    keep_rows = np.asarray(keep_rows, dtype=int)
    col_counts = np.diff(A[keep_rows].tocsc().indptr) if keep_rows.size else np.zeros(n, dtype=int)
    fixed = np.full(n, np.nan)
    for j in np.flatnonzero(col_counts == 0):
        c = problem.objective[j]
        if c > 0:
            v = problem.lower[j]
        elif c < 0:
            v = problem.upper[j]
        else:
            v = problem.lower[j] if np.isfinite(problem.lower[j]) else (
                problem.upper[j] if np.isfinite(problem.upper[j]) else 0.0)
        if not np.isfinite(v):
            return _terminal(problem, LpStatus.UNBOUNDED, f"empty column {j} is unbounded in the objective")
        fixed[j] = v
    keep_cols = np.flatnonzero(np.isnan(fixed))

    reduced = LpProblem(
        problem.objective[keep_cols],
        A[keep_rows][:, keep_cols],
        lo[keep_rows],
        up[keep_rows],
        problem.lower[keep_cols],
        problem.upper[keep_cols],
    )
    return reduced, keep_cols, fixed


def _terminal(problem: LpProblem, status: LpStatus, message: str) -> LpSolution:
    x = np.zeros(problem.n_vars)
    return LpSolution(status, x, np.nan, problem.primal_infeasibility(x), message=message)


class _Simplex:
    def __init__(self, A: np.ndarray, lower, upper, cost, max_iter: int):
        self.A = A
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.cost = np.asarray(cost, dtype=float)
        self.max_iter = max_iter
        self.iterations = 0

    def run(self, x: np.ndarray, basis: list[int]):
        """Iterate from a feasible basis. Returns status string."""
        A, lower, upper, cost = self.A, self.lower, self.upper, self.cost
        m, ntot = A.shape
        is_basic = np.zeros(ntot, dtype=bool)
        is_basic[basis] = True
        degenerate_run = 0

        while True:
            if self.iterations >= self.max_iter:
                return "iteration_limit", x, basis
            B = A[:, basis]
            lu = la.lu_factor(B)
            nonbasic = np.flatnonzero(~is_basic)
            rhs = -A[:, nonbasic] @ x[nonbasic]
            x[basis] = la.lu_solve(lu, rhs)
            y = la.lu_solve(lu, cost[basis], trans=1)
            d = cost - A.T @ y

            at_lower = np.isclose(x, lower, atol=FEAS_TOL, rtol=0) & np.isfinite(lower)
            at_upper = np.isclose(x, upper, atol=FEAS_TOL, rtol=0) & np.isfinite(upper)
            can_up = ~is_basic & ~at_upper & (d < -OPT_TOL)
            can_down = ~is_basic & ~at_lower & (d > OPT_TOL)
            eligible = can_up | can_down
            if not eligible.any():
                return "optimal", x, basis

            bland = degenerate_run >= DEGENERATE_SWITCH
            cand = np.flatnonzero(eligible)
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if can_up[j] else -1.0

            w = la.lu_solve(lu, A[:, j])
            delta = -direction * w
            theta = upper[j] - lower[j]
            leave = -1
            leave_to = 0.0
            xb = x[basis]
            lb = lower[basis]
            ub = upper[basis]
            best_piv = 0.0
            for pos in range(m):
                dp = delta[pos]
                if abs(dp) <= PIVOT_TOL:
                    continue
                if dp < 0:
                    if not np.isfinite(lb[pos]):
                        continue
                    step = max((xb[pos] - lb[pos]) / -dp, 0.0)
                    bound = lb[pos]
                else:
                    if not np.isfinite(ub[pos]):
                        continue
                    step = max((ub[pos] - xb[pos]) / dp, 0.0)
                    bound = ub[pos]
                if step < theta - 1e-12:
                    take = True
                elif step <= theta + 1e-12:
                    if leave < 0:
                        take = True
                    elif bland:
                        take = basis[pos] < basis[leave]
                    else:
                        take = abs(dp) > best_piv
                else:
                    take = False
                if take:
                    theta, leave, leave_to, best_piv = min(step, theta), pos, bound, abs(dp)

            if not np.isfinite(theta):
                return "unbounded", x, basis
            self.iterations += 1
            degenerate_run = degenerate_run + 1 if theta <= FEAS_TOL else 0

            x[j] += direction * theta
            x[basis] += theta * delta
            if leave < 0:
                # entering variable hit its own opposite bound
                x[j] = upper[j] if direction > 0 else lower[j]
                continue
            out = basis[leave]
            x[out] = leave_to
            is_basic[out] = False
            is_basic[j] = True
            basis[leave] = j


def simplex_solve(problem: LpProblem, max_iter: int = 50_000) -> LpSolution:
    """Solve ``problem`` with the built-in two-phase bounded revised simplex."""
    if problem.integrality is not None and problem.integrality.any():
        raise ValueError("simplex_solve handles LPs only; use solve_mip for binaries")
    pre = presolve(problem)
    if isinstance(pre, LpSolution):
        return pre
    reduced, keep_cols, fixed = pre
    n = reduced.n_vars
    m = reduced.n_rows

    if m == 0:
        x_red = np.empty(n)
        for j in range(n):
            c = reduced.objective[j]
            v = reduced.lower[j] if c > 0 else reduced.upper[j] if c < 0 else (
                reduced.lower[j] if np.isfinite(reduced.lower[j]) else 0.0)
            if not np.isfinite(v):
                return _terminal(problem, LpStatus.UNBOUNDED, "objective unbounded along a free column")
            x_red[j] = v
        return _finish(problem, keep_cols, fixed, x_red, "optimal", 0)

    # structural columns, then one slack per row (A x - s = 0, s within row bounds)
    A_struct = reduced.A.toarray() if sp.issparse(reduced.A) else np.asarray(reduced.A)
    A_ext = np.hstack([A_struct, -np.eye(m)])
    lower = np.concatenate([reduced.lower, reduced.row_lower])
    upper = np.concatenate([reduced.upper, reduced.row_upper])

    x = np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0))
    resid = -A_ext @ x
    signs = np.where(resid >= 0, 1.0, -1.0)
    A_full = np.hstack([A_ext, np.diag(signs)])
    lower_full = np.concatenate([lower, np.zeros(m)])
    upper_full = np.concatenate([upper, np.full(m, INF)])
    x_full = np.concatenate([x, np.abs(resid)])
    ntot = A_full.shape[1]
    basis = list(range(ntot - m, ntot))

    phase1_cost = np.zeros(ntot)
    phase1_cost[ntot - m:] = 1.0
    solver = _Simplex(A_full, lower_full, upper_full, phase1_cost, max_iter)
    status, x_full, basis = solver.run(x_full, basis)
    if status == "iteration_limit":
        return _finish(problem, keep_cols, fixed, x_full[:n], status, solver.iterations)
    infeas = float(x_full[ntot - m:].sum())
    if infeas > 1e-7 * max(1.0, np.abs(x_full[:n]).max(initial=0.0)):
        x_out = _expand(problem, keep_cols, fixed, x_full[:n])
        return LpSolution(LpStatus.INFEASIBLE, x_out, np.nan, problem.primal_infeasibility(x_out),
                          iterations=solver.iterations, message="phase one ended with positive infeasibility")

    # phase two: artificials pinned at zero
    solver.upper[ntot - m:] = 0.0
    x_full[ntot - m:] = 0.0
    solver.cost = np.concatenate([reduced.objective, np.zeros(ntot - n)])
    status, x_full, basis = solver.run(x_full, basis)
    return _finish(problem, keep_cols, fixed, x_full[:n], status, solver.iterations)


def _expand(problem, keep_cols, fixed, x_red):
    x = fixed.copy()
    x[keep_cols] = x_red
    return x


def _finish(problem, keep_cols, fixed, x_red, status, iterations) -> LpSolution:
    x = _expand(problem, keep_cols, fixed, x_red)
    # snap values within tolerance of a bound onto it
    for bound in (problem.lower, problem.upper):
        close = np.isfinite(bound) & (np.abs(x - bound) <= FEAS_TOL)
        x[close] = bound[close]
    st = {"optimal": LpStatus.OPTIMAL, "unbounded": LpStatus.UNBOUNDED,
          "iteration_limit": LpStatus.ITERATION_LIMIT}[status]
    obj = problem.objective_value(x) if st is not LpStatus.UNBOUNDED else -np.inf
    return LpSolution(st, x, obj, problem.primal_infeasibility(x), iterations=iterations)
