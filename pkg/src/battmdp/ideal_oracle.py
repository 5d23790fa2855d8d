"""Perfect-foresight dispatch: the benchmark schedule behind MDP efficiency.

Per hour ``t`` the program carries the rate ``u``, battery energy ``eb``,
grid energy ``eg`` and stored energy ``es``. The loss model
``eb = C_B max(eta u, u / eta)`` is written as two lower bounds on ``eb``,
which is exact because every tariff charges nondecreasingly in ``eb``.
No-refund cases bill an import variable ``g >= max(eg, 0)``; the energy-limit
tariff adds a tier binary ``B`` and the product ``Z`` (``B * eb``, or ``B * g``
when exports are not refunded); peak pricing adds one daily peak ``p >= eg``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .battery_pricing import BatteryParams, CostCase, PricingKind, PricingPolicy, battery_energy, effective_efficiency
from .data_io import HOURS_PER_DAY, LoadSeries
from .lp_core import LpProblem, LpSolution, solve_lp, solve_mip
from .lp_core.problem import INF
from .policy_engine import correct_step
from .simulator import SimulationResult, replay_schedule

SNAP_TOL = 1e-6  # tier decisions within this of the limit are pushed to the low tier


class OracleError(RuntimeError):
    def __init__(self, message: str, solution: LpSolution):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class IdealProblemSpec:
    load: LoadSeries
    battery: BatteryParams
    pricing: PricingPolicy
    case: CostCase
    horizon_hours: int | None = None
    big_m: float | None = None

    def __post_init__(self):
        H = self.hours
        if H < 1 or H > len(self.load):
            raise ValueError("horizon must lie within the load series")
        if self.pricing.bills_peak and H % HOURS_PER_DAY:
            raise ValueError("peak pricing needs a whole number of days")
        if self.big_m is not None and self.big_m < self.min_big_m():
            raise ValueError(f"big-M must be at least {self.min_big_m()}")

    @property
    def hours(self) -> int:
        return len(self.load) if self.horizon_hours is None else self.horizon_hours

    @property
    def values(self) -> np.ndarray:
        return self.load.values[: self.hours]

    @property
    def eta(self) -> float:
        return effective_efficiency(self.battery, self.case)

    def min_big_m(self) -> float:
        """Smallest constant that keeps the inactive tier row slack in every hour."""
        cap, eta = self.battery.capacity_kwh, self.eta
        hi = float(self.values.max()) + cap / eta
        lo = float(self.values.min()) - cap * eta if self.case.refund_exports else 0.0
        return max(hi, self.pricing.limit_kwh - lo)

    def resolved_big_m(self) -> float:
        return self.big_m if self.big_m is not None else self.min_big_m() + 1.0


@dataclass
class _Builder:
    spec: IdealProblemSpec
    n: int = 0
    cost: list = field(default_factory=list)
    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    binary: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (cols, vals, lo, up) blocks
    layout: dict = field(default_factory=dict)

    def block(self, name: str, size: int, lo, up, cost=0.0, binary=False) -> np.ndarray:
        idx = np.arange(self.n, self.n + size)
        self.layout[name] = idx
        self.n += size
        self.lower.append(np.broadcast_to(np.asarray(lo, float), (size,)))
        self.upper.append(np.broadcast_to(np.asarray(up, float), (size,)))
        self.cost.append(np.broadcast_to(np.asarray(cost, float), (size,)))
        self.binary.append(np.full(size, binary))
        return idx

    def add_rows(self, terms, lo, up) -> None:
        """One row per hour: ``lo <= sum(coef * x[idx]) <= up`` for each (idx, coef) term."""
        size = len(terms[0][0])
        self.rows.append((terms, np.broadcast_to(np.asarray(lo, float), (size,)),
                          np.broadcast_to(np.asarray(up, float), (size,))))

    def problem(self, name: str) -> LpProblem:
        r, c, v, lo_all, up_all = [], [], [], [], []
        offset = 0
        for terms, lo, up in self.rows:
            m = lo.size
            for idx, coef in terms:
                r.append(offset + np.arange(m))
                c.append(np.asarray(idx))
                v.append(np.broadcast_to(np.asarray(coef, float), (m,)))
            lo_all.append(lo)
            up_all.append(up)
            offset += m
        A = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(offset, self.n))
        binary = np.concatenate(self.binary)
        return LpProblem(np.concatenate(self.cost), A, np.concatenate(lo_all), np.concatenate(up_all),
                         np.concatenate(self.lower), np.concatenate(self.upper),
                         integrality=binary if binary.any() else None, name=name)


def _core(spec: IdealProblemSpec, energy_price: np.ndarray) -> _Builder:
    """Shared storage/battery/grid block; prices the billed energy with ``energy_price``."""
    H, cap, eta = spec.hours, spec.battery.capacity_kwh, spec.eta
    refund = spec.case.refund_exports
    b = _Builder(spec)
    u = b.block("u", H, -1.0, 1.0)
    eb = b.block("eb", H, -cap * eta, cap / eta)
    eg = b.block("eg", H, -INF, INF, energy_price if refund else 0.0)
    es = b.block("es", H, 0.0, cap)
    b.add_rows([(eg, 1.0), (eb, -1.0)], spec.values, spec.values)
    init = np.zeros(H)
    init[0] = spec.battery.initial_stored
    # es[t] - es[t-1] - cap u[t] = 0, with es[-1] the initial storage
    b.add_rows([(es, 1.0), (u, -cap)] if H == 1 else [(es, 1.0), (np.r_[es[0], es[:-1]], np.r_[0.0, -np.ones(H - 1)]),
                                                     (u, -cap)], init, init)
    b.add_rows([(eb, 1.0), (u, -cap * eta)], 0.0, INF)
    if eta < 1:
        b.add_rows([(eb, 1.0), (u, -cap / eta)], 0.0, INF)
    if not refund:
        g = b.block("g", H, 0.0, INF, energy_price)
        b.add_rows([(g, 1.0), (eg, -1.0)], 0.0, INF)
    return b


def _hourly(prices: np.ndarray, H: int) -> np.ndarray:
    return np.resize(prices, H)


def build_policy_ab_lp(spec: IdealProblemSpec) -> LpProblem:
    if spec.pricing.kind not in (PricingKind.TOU_A, PricingKind.REALTIME_B):
        raise ValueError("time-of-use or real-time pricing expected")
    return _build_ab(spec).problem("IDEALAB")


def _build_ab(spec):
    return _core(spec, _hourly(spec.pricing.hourly_prices(), spec.hours))


def build_policy_c_milp(spec: IdealProblemSpec) -> LpProblem:
    if spec.pricing.kind is not PricingKind.ENERGY_LIMIT_C:
        raise ValueError("energy-limit pricing expected")
    return _build_c(spec).problem("IDEALC")


def _build_c(spec):
    p = spec.pricing
    H, cap, eta = spec.hours, spec.battery.capacity_kwh, spec.eta
    b = _core(spec, np.full(H, p.low_price))
    delta = p.high_price - p.low_price
    M = spec.resolved_big_m()
    refund = spec.case.refund_exports
    # with refunds the tier premium delta * B * eg is split as delta * (B * load + Z), Z = B * eb
    B = b.block("B", H, 0.0, 1.0, delta * spec.values if refund else 0.0, binary=True)
    if refund:
        tier, eb = b.layout["eg"], b.layout["eb"]
        Z = b.block("Z", H, -cap * eta, cap / eta, delta)
        b.add_rows([(Z, 1.0), (B, -cap / eta)], -INF, 0.0)
        b.add_rows([(Z, 1.0), (B, cap * eta)], 0.0, INF)
        b.add_rows([(eb, 1.0), (Z, -1.0), (B, -cap * eta)], -cap * eta, INF)
        b.add_rows([(eb, 1.0), (Z, -1.0), (B, cap / eta)], -INF, cap / eta)
    else:
        tier = b.layout["g"]
        g_max = float(spec.values.max()) + cap / eta
        # Z = B * g on g in [0, g_max]
        Z = b.block("Z", H, 0.0, g_max, delta)
        b.add_rows([(Z, 1.0), (B, -g_max)], -INF, 0.0)
        b.add_rows([(Z, 1.0), (tier, -1.0)], -INF, 0.0)
        b.add_rows([(Z, 1.0), (tier, -1.0), (B, -g_max)], -g_max, INF)
    # B = 1 forces the high tier, B = 0 the low one (boundary belongs to the low tier)
    b.add_rows([(tier, 1.0), (B, -M)], p.limit_kwh - M, INF)
    b.add_rows([(tier, 1.0), (B, -M)], -INF, p.limit_kwh)
    return b


def build_policy_d_program(spec: IdealProblemSpec) -> LpProblem:
    if spec.pricing.kind is not PricingKind.PEAK_D:
        raise ValueError("peak pricing expected")
    return _build_d(spec).problem("IDEALD")


def _build_d(spec):
    H = spec.hours
    b = _core(spec, np.full(H, spec.pricing.energy_price))
    days = H // HOURS_PER_DAY
    p = b.block("p", days, 0.0, INF, spec.pricing.peak_price)
    b.add_rows([(np.repeat(p, HOURS_PER_DAY), 1.0), (b.layout["eg"], -1.0)], 0.0, INF)
    return b


_BUILDERS = {
    PricingKind.TOU_A: _build_ab,
    PricingKind.REALTIME_B: _build_ab,
    PricingKind.ENERGY_LIMIT_C: _build_c,
    PricingKind.PEAK_D: _build_d,
}


def build_program(spec: IdealProblemSpec) -> tuple[LpProblem, dict]:
    """Program for the problem's tariff plus the variable layout (name -> column indices)."""
    b = _BUILDERS[spec.pricing.kind](spec)
    return b.problem(f"IDEAL{spec.pricing.kind.value}"), b.layout


def _snap_tier(u: np.ndarray, spec: IdealProblemSpec) -> np.ndarray:
    """Move hours that sit a hair above the tier limit back onto it.

    The solver may leave ``eg`` within its feasibility tolerance above the
    limit with ``B = 0``; billing that hour at the high rate would charge for
    solver noise.
    """
    limit, cap = spec.pricing.limit_kwh, spec.battery.capacity_kwh
    out = u.copy()
    stored = spec.battery.initial_stored
    for t, load in enumerate(spec.values):
        stored_next, rate = correct_step(stored, float(out[t]), spec.battery)
        e_g = load + battery_energy(rate, spec.battery, spec.case)
        if limit < e_g <= limit + SNAP_TOL:
            target = limit - load
            rate = target / (cap / spec.eta) if target >= 0 else target / (cap * spec.eta)
            while load + battery_energy(rate, spec.battery, spec.case) > limit:
                rate = np.nextafter(rate, -np.inf)
            stored_next, rate = correct_step(stored, float(rate), spec.battery)
        out[t] = rate
        stored = stored_next
    return out


def _fix_binaries_and_resolve(problem: LpProblem, sol: LpSolution, lp_method: str) -> LpSolution:
    """Re-solve the continuous part with the tier binaries fixed at their rounded values.

    A MIP solver accepts binaries within its integrality tolerance, which the
    big-M rows amplify into visible limit violations; the fixed LP removes them.
    """
    fixed = np.round(sol.values[problem.integrality])
    lo, up = problem.lower.copy(), problem.upper.copy()
    lo[problem.integrality] = up[problem.integrality] = fixed
    polished = solve_lp(problem.relaxation().with_bounds(lo, up), method=lp_method)
    if not polished.optimal:
        return sol
    polished.gap, polished.nodes = sol.gap, sol.nodes
    return polished


def ideal_schedule(spec: IdealProblemSpec, mip_method: str = "highs", lp_method: str = "highs",
                   time_limit: float | None = None) -> SimulationResult:
    """Solve the perfect-foresight program and replay its rates through the billing model.

    ``extra`` on the result records the program objective, MIP gap and node count.
    """
    problem, layout = build_program(spec)
    if problem.n_binaries:
        sol = solve_mip(problem, method=mip_method, lp_method=lp_method, time_limit=time_limit)
        if sol.optimal:
            sol = _fix_binaries_and_resolve(problem, sol, lp_method)
    else:
        sol = solve_lp(problem, method=lp_method, time_limit=time_limit)
    if not sol.optimal:
        raise OracleError(f"ideal program not solved to optimality: {sol.status.value}, gap {sol.gap:.3g}", sol)
    u = np.clip(sol.values[layout["u"]], -1.0, 1.0)
    if spec.pricing.kind is PricingKind.ENERGY_LIMIT_C:
        u = _snap_tier(u, spec)
    result = replay_schedule(u, spec.values, spec.battery, spec.pricing, spec.case)
    result.extra.update({
        "program_objective": sol.objective,
        "gap": sol.gap,
        "nodes": sol.nodes,
        "n_vars": problem.n_vars,
        "n_rows": problem.n_rows,
        "n_binaries": problem.n_binaries,
    })
    return result
