"""LP and MILP entry points.

``solve_lp`` dispatches to HiGHS (dual simplex, or interior point followed by
crossover) or the built-in revised simplex; all return basic (vertex)
solutions. ``solve_mip`` runs the
built-in branch-and-bound over LP relaxations, or hands the whole program to
HiGHS MIP for horizons beyond desk scale.
"""

from __future__ import annotations

import heapq
import logging
import time

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .problem import INF, LpProblem, LpSolution, LpStatus
from .simplex import simplex_solve

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
INT_TOL = 1e-6
HEURISTIC_EVERY = 10  # nodes between rounding heuristics
HIGHS_METHODS = {"highs": "highs-ds", "highs-ipm": "highs-ipm"}


def solve_lp(problem: LpProblem, method: str = "highs", time_limit: float | None = None) -> LpSolution:
    """Solve a pure LP.

    ``method`` is ``"highs"`` (HiGHS dual simplex, the default at scale),
    ``"highs-ipm"`` (interior point plus crossover, faster on the peak MDP)
    or ``"simplex"`` (built-in dense revised simplex, desk scale only).
    """
    if problem.integrality is not None and problem.integrality.any():
        raise ValueError("problem has binary variables; call solve_mip")
    if method == "simplex":
        return simplex_solve(problem)
    if method not in HIGHS_METHODS:
        raise ValueError(f"unknown LP method {method!r}")
    return _highs_lp(problem, time_limit, HIGHS_METHODS[method])


def _split_rows(problem: LpProblem):
    """Rewrite two-sided rows into linprog's A_ub x <= b_ub / A_eq x = b_eq form."""
    A = problem.A.tocsr()
    lo, up = problem.row_lower, problem.row_upper
    eq = lo == up
    ub_rows = ~eq & np.isfinite(up)
    lb_rows = ~eq & np.isfinite(lo)
    A_ub = sp.vstack([A[ub_rows], -A[lb_rows]]).tocsr()
    b_ub = np.concatenate([up[ub_rows], -lo[lb_rows]])
    return A_ub, b_ub, A[eq], lo[eq]


def _highs_lp(problem: LpProblem, time_limit: float | None, algorithm: str = "highs-ds") -> LpSolution:
    A_ub, b_ub, A_eq, b_eq = _split_rows(problem)
    bounds = np.column_stack([problem.lower, problem.upper])
    options = {"presolve": True, "primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = linprog(
        problem.objective,
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A_eq if A_eq.shape[0] else None,
        b_eq=b_eq if A_eq.shape[0] else None,
        bounds=bounds,
        method=algorithm,
        options=options,
    )
    status = {0: LpStatus.OPTIMAL, 1: LpStatus.ITERATION_LIMIT, 2: LpStatus.INFEASIBLE,
              3: LpStatus.UNBOUNDED}.get(res.status, LpStatus.INFEASIBLE)
    x = np.asarray(res.x, dtype=float) if res.x is not None else np.zeros(problem.n_vars)
    obj = problem.objective_value(x) if status is LpStatus.OPTIMAL else np.nan
    duals = None
    if status is LpStatus.OPTIMAL:
        duals = np.zeros(problem.n_rows)
        lo, up = problem.row_lower, problem.row_upper
        eq = lo == up
        ub_rows = np.flatnonzero(~eq & np.isfinite(up))
        lb_rows = np.flatnonzero(~eq & np.isfinite(lo))
        if eq.any():
            duals[eq] = res.eqlin.marginals
        if ub_rows.size or lb_rows.size:
            m_ub = res.ineqlin.marginals
            duals[ub_rows] += m_ub[:ub_rows.size]
            duals[lb_rows] -= m_ub[ub_rows.size:]
    return LpSolution(status, x, obj, problem.primal_infeasibility(x),
                      iterations=int(getattr(res, "nit", 0) or 0), message=str(res.message),
                      row_duals=duals)


def solve_mip(
    problem: LpProblem,
    method: str = "bnb",
    node_limit: int = 1_000_000,
    gap_tol: float = 1e-6,
    lp_method: str = "highs",
    time_limit: float | None = None,
) -> LpSolution:
    """Solve a program with binary columns.

    ``method="bnb"`` is the built-in best-bound branch-and-bound (branching on
    the lowest-index most-fractional binary); ``method="highs"`` delegates to
    HiGHS MIP, which is what makes multi-week tier problems tractable.
    """
    if method == "highs":
        return _highs_mip(problem, gap_tol, time_limit)
    if method != "bnb":
        raise ValueError(f"unknown MIP method {method!r}")
    return branch_and_bound(problem, node_limit=node_limit, gap_tol=gap_tol, lp_method=lp_method,
                            time_limit=time_limit)


def _highs_mip(problem: LpProblem, gap_tol: float, time_limit: float | None) -> LpSolution:
    integrality = np.zeros(problem.n_vars) if problem.integrality is None else problem.integrality.astype(float)
    constraints = [LinearConstraint(problem.A, problem.row_lower, problem.row_upper)] if problem.n_rows else []
    options = {"mip_rel_gap": 0.0, "presolve": True}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = milp(problem.objective, constraints=constraints, integrality=integrality,
               bounds=Bounds(problem.lower, problem.upper), options=options)
    if res.x is None:
        status = LpStatus.UNBOUNDED if res.status == 3 else (
            LpStatus.ITERATION_LIMIT if res.status == 1 else LpStatus.INFEASIBLE)
        x = np.zeros(problem.n_vars)
        return LpSolution(status, x, np.nan, problem.primal_infeasibility(x), message=str(res.message))
    x = np.asarray(res.x, dtype=float)
    if problem.integrality is not None:
        x[problem.integrality] = np.round(x[problem.integrality])
    obj = problem.objective_value(x)
    bound = getattr(res, "mip_dual_bound", obj)
    gap = max(0.0, obj - (bound + problem.objective_offset)) if bound is not None else 0.0
    status = LpStatus.OPTIMAL if res.status == 0 else LpStatus.ITERATION_LIMIT
    return LpSolution(status, x, obj, problem.primal_infeasibility(x),
                      nodes=int(getattr(res, "mip_node_count", 0) or 0), gap=gap, message=str(res.message))


def _round_and_resolve(relaxed: LpProblem, x: np.ndarray, binaries: np.ndarray, lo: np.ndarray, up: np.ndarray,
                       lp_method: str) -> LpSolution | None:
    """Incumbent heuristic: fix every binary at its rounded relaxation value and re-solve."""
    flo, fup = lo.copy(), up.copy()
    flo[binaries] = fup[binaries] = np.clip(np.round(x[binaries]), lo[binaries], up[binaries])
    sol = solve_lp(relaxed.with_bounds(flo, fup), method=lp_method)
    return sol if sol.optimal else None


def branch_and_bound(
    problem: LpProblem,
    node_limit: int = 1_000_000,
    gap_tol: float = 1e-6,
    lp_method: str = "highs",
    time_limit: float | None = None,
) -> LpSolution:
    """Best-bound branch-and-bound over LP relaxations.

    Nodes are popped by (relaxation bound, creation order), so the search is
    deterministic. Branching fixes a binary to 0 or 1 through its bounds.
    Every ``HEURISTIC_EVERY`` nodes the relaxation is rounded and re-solved to
    seed the incumbent.
    """
    started = time.monotonic()
    binaries = np.flatnonzero(problem.integrality) if problem.integrality is not None else np.array([], int)
    relaxed = problem.relaxation()

    root = solve_lp(relaxed, method=lp_method)
    if root.status is not LpStatus.OPTIMAL:
        return root
    incumbent: np.ndarray | None = None
    incumbent_obj = INF
    counter = 0
    heap = [(root.objective, counter, problem.lower.copy(), problem.upper.copy(), root)]
    nodes = 0

    while heap:
        bound, _, lo, up, sol = heapq.heappop(heap)
        if bound >= incumbent_obj - gap_tol:
            # every remaining node is at least this bad
            heap.clear()
            break
        nodes += 1
        if nodes > node_limit or (time_limit is not None and time.monotonic() - started > time_limit):
            heapq.heappush(heap, (bound, counter, lo, up, sol))
            break
        frac = np.abs(sol.values[binaries] - np.round(sol.values[binaries]))
        if binaries.size == 0 or frac.max(initial=0.0) <= INT_TOL:
            x = sol.values.copy()
            x[binaries] = np.round(x[binaries])
            obj = problem.objective_value(x)
            if obj < incumbent_obj:
                incumbent, incumbent_obj = x, obj
            continue
        if nodes % HEURISTIC_EVERY == 1:
            found = _round_and_resolve(relaxed, sol.values, binaries, lo, up, lp_method)
            if found is not None and found.objective < incumbent_obj:
                incumbent, incumbent_obj = found.values, found.objective
        # most fractional; argmin returns the lowest index on ties
        dist = np.abs(frac - 0.5)
        var = int(binaries[np.argmin(dist)])
        for value in (0.0, 1.0):
            clo, cup = lo.copy(), up.copy()
            clo[var] = cup[var] = value
            child = solve_lp(relaxed.with_bounds(clo, cup), method=lp_method)
            if child.status is not LpStatus.OPTIMAL or child.objective >= incumbent_obj - gap_tol:
                continue
            counter += 1
            heapq.heappush(heap, (child.objective, counter, clo, cup, child))

    if incumbent is None:
        status = LpStatus.ITERATION_LIMIT if heap else LpStatus.INFEASIBLE
        x = np.zeros(problem.n_vars)
        return LpSolution(status, x, np.nan, problem.primal_infeasibility(x), nodes=nodes, gap=INF,
                          message="no integral solution found")
    # an exhausted tree proves the incumbent optimal
    best_bound = min(item[0] for item in heap) if heap else incumbent_obj
    gap = max(0.0, incumbent_obj - best_bound)
    status = LpStatus.OPTIMAL if gap <= gap_tol else LpStatus.ITERATION_LIMIT
    if status is not LpStatus.OPTIMAL:
        log.warning("branch-and-bound stopped after %d nodes with gap %.3g", nodes, gap)
    return LpSolution(status, incumbent, incumbent_obj, problem.primal_infeasibility(incumbent),
                      nodes=nodes, gap=gap)
