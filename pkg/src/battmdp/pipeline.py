"""End-to-end training helpers shared by the command line and the acceptance suite."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .battery_pricing import BatteryParams, CostCase, PricingPolicy, battery_energy, build_cost_tensor, demand_table
from .data_io import LoadSeries
from .lp_core import LpProblem, LpSolution, solve_lp
from .markov_chain import FactoredChain, PeakThresholds, TransitionMatrix, action_rates, build_chain, \
    estimate_demand_transitions, joint_transitions, peak_destinations
from .mdp_program import DEFAULT_RELAXATION, RelaxationOption, StateSpace, ViolationReport, assemble_basic, \
    assemble_peak, check_solution
from .policy_engine import Policy, extract_policy
from .quantile_fourier import QuantileSet, assign_quantiles

log = logging.getLogger(__name__)


@dataclass
class TrainedMdp:
    policy: Policy
    problem: LpProblem
    solution: LpSolution
    violations: ViolationReport
    chain: FactoredChain
    thresholds: PeakThresholds | None
    seconds: float


def demand_chain(qset: QuantileSet, train: LoadSeries) -> TransitionMatrix:
    return estimate_demand_transitions(assign_quantiles(qset, train.values, train.hour_of_day()), len(qset.models))


def build_mdp(qset: QuantileSet | np.ndarray, demand: TransitionMatrix | np.ndarray, battery: BatteryParams,
              pricing: PricingPolicy, case: CostCase, thresholds: PeakThresholds | None = None,
              relax: RelaxationOption = DEFAULT_RELAXATION) -> tuple[LpProblem, FactoredChain]:
    """Cost tensor, factored chain and assembled LP (with the peak axis when thresholds are given)."""
    costs = build_cost_tensor(qset, battery, pricing, case, thresholds)
    if thresholds is None:
        chain = build_chain(demand)
        return assemble_basic(costs, chain, relax), chain
    table = qset if isinstance(qset, np.ndarray) else demand_table(qset)
    raw, dest = peak_destinations(thresholds, table, battery_energy(action_rates(), battery, case))
    chain = build_chain(demand, peak_dest=dest, peak_raw=raw)
    return assemble_peak(costs, chain, relax), chain


def train_mdp(qset: QuantileSet, demand: TransitionMatrix | np.ndarray, battery: BatteryParams,
              pricing: PricingPolicy, case: CostCase, thresholds: PeakThresholds | None = None,
              relax: RelaxationOption = DEFAULT_RELAXATION, lp_method: str = "highs",
              time_limit: float | None = None) -> TrainedMdp:
    """Assemble, solve and turn the MDP LP into a policy; violations use the unrelaxed rows."""
    if pricing.bills_peak and thresholds is None:
        thresholds = PeakThresholds()
    started = time.perf_counter()
    problem, chain = build_mdp(qset, demand, battery, pricing, case, thresholds, relax)
    log.info("MDP LP: %d variables, %d rows, %d constraints incl. bounds",
             problem.n_vars, problem.n_rows, problem.constraint_count())
    solution = solve_lp(problem, method=lp_method, time_limit=time_limit)
    space = StateSpace.of(chain)
    if solution.optimal:
        violations = check_solution(solution.values, joint_transitions(chain))
        policy = extract_policy(solution, space)
    else:
        violations = check_solution(np.zeros(space.n_vars), joint_transitions(chain))
        policy = extract_policy(np.zeros(space.n_vars), space)
    return TrainedMdp(policy, problem, solution, violations, chain, thresholds, time.perf_counter() - started)
