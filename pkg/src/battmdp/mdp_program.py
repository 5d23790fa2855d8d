"""Average-cost MDP as a linear program over state-action occupancy measures.

Variable ``y[s, k]`` (column ``s * K + k``) is the long-run probability of
being in state ``s`` and taking action ``k``. Row 0 normalizes the total mass;
row ``1 + s'`` balances outflow from ``s'`` against the inflow
``sum_{s,k} y[s, k] P_k[s, s']``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .battery_pricing import CostTensor
from .lp_core import LpProblem
from .lp_core.problem import INF
from .markov_chain import N_ACTIONS, N_HOURS, N_QUANTILES, N_SOC, FactoredChain, closed_classes, joint_transitions

CHECK_TOL = 1e-9


@dataclass(frozen=True)
class StateSpace:
    n_hours: int = N_HOURS
    n_soc: int = N_SOC
    n_quantiles: int = N_QUANTILES
    n_peaks: int | None = None
    n_actions: int = N_ACTIONS

    @classmethod
    def of(cls, chain: FactoredChain) -> "StateSpace":
        return cls(chain.n_hours, chain.n_soc, chain.n_quantiles, chain.n_peaks, chain.n_actions)

    @property
    def shape(self) -> tuple[int, ...]:
        base = (self.n_hours, self.n_soc, self.n_quantiles)
        return base if self.n_peaks is None else base + (self.n_peaks,)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_vars(self) -> int:
        return self.n_states * self.n_actions

    @property
    def n_constraints(self) -> int:
        """Normalization + one nonnegativity per variable + one balance row per state."""
        return 1 + self.n_vars + self.n_states


@dataclass(frozen=True)
class RelaxationOption:
    id: int
    normalization_sense: str  # "=", "<=", ">="
    balance_sense: str  # "=", ">=", "<=", "band"
    band_lower: float | None = None

    @classmethod
    def get(cls, option_id: int) -> "RelaxationOption":
        try:
            return RELAXATIONS[option_id]
        except KeyError:
            raise ValueError(f"relaxation option must be one of {sorted(RELAXATIONS)}") from None

    def bounds(self, sense: str, rhs: float, band_lower: float | None = None) -> tuple[float, float]:
        return {
            "=": (rhs, rhs),
            "<=": (-INF, rhs),
            ">=": (rhs, INF),
            "band": (band_lower, rhs),
        }[sense]


RELAXATIONS = {
    1: RelaxationOption(1, "=", "="),
    2: RelaxationOption(2, "=", ">="),
    3: RelaxationOption(3, "=", "<="),
    4: RelaxationOption(4, "<=", "<="),
    5: RelaxationOption(5, ">=", "<="),
    6: RelaxationOption(6, "=", "band", -1e-4),
}
DEFAULT_RELAXATION = RELAXATIONS[3]


@dataclass(frozen=True)
class ViolationReport:
    max_normalization_violation: float
    max_balance_violation: float
    worst_state: int
    tolerance: float = CHECK_TOL

    @property
    def passed(self) -> bool:
        return self.max_normalization_violation <= self.tolerance and self.max_balance_violation <= self.tolerance

    def diagnosis(self) -> str:
        norm = "Pass" if self.max_normalization_violation <= self.tolerance else "Fails"
        bal = "Pass" if self.max_balance_violation <= self.tolerance else "Fails"
        return f"normalization: {norm}; balance: {bal}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        d["diagnosis"] = self.diagnosis()
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def balance_matrix(transitions: list[sp.spmatrix], n_states: int) -> sp.csr_matrix:
    """Rows: states s'; columns: (s, k). Entry = [s == s'] - P_k[s, s']."""
    K = len(transitions)
    rows, cols, vals = [], [], []
    for k, P in enumerate(transitions):
        P = sp.coo_matrix(P)
        if P.shape != (n_states, n_states):
            raise ValueError(f"transition for action {k + 1} has shape {P.shape}, expected {(n_states,) * 2}")
        rows.append(P.col)
        cols.append(P.row * K + k)
        vals.append(-P.data)
    s = np.arange(n_states)
    for k in range(K):
        rows.append(s)
        cols.append(s * K + k)
        vals.append(np.ones(n_states))
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_states, n_states * K))
    return M.tocsr()  # duplicates (self-transitions) are summed here


def state_groups(chain: FactoredChain) -> np.ndarray | None:
    """Closed demand class of every joint state, or None when the demand chain has a single closed class.

    The demand factor ignores actions, so each of its closed classes is a separate recurrent world
    and the LP needs one normalization row per class to price them all.
    """
    labels = closed_classes(chain.demand)
    if labels.max() < 1:
        return None
    q_axis = np.arange(chain.n_quantiles).reshape((1, 1, -1) + (() if chain.n_peaks is None else (1,)))
    return np.broadcast_to(labels[q_axis], chain.state_shape).ravel()


def normalization_rows(n_states: int, n_actions: int, groups: np.ndarray | None) -> tuple[sp.csr_matrix, np.ndarray]:
    """Normalization rows and their right-hand sides; one row of total mass 1 unless ``groups`` is given.

    With groups, each closed class gets mass ``1 / n_groups``; transient states (label -1) join no row.
    """
    if groups is None:
        return sp.csr_matrix(np.ones((1, n_states * n_actions))), np.ones(1)
    groups = np.asarray(groups)
    if groups.shape != (n_states,):
        raise ValueError(f"groups must label all {n_states} states")
    n_groups = int(groups.max()) + 1
    cols = np.flatnonzero(np.repeat(groups, n_actions) >= 0)
    rows = np.repeat(groups, n_actions)[cols]
    rows_mat = sp.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(n_groups, n_states * n_actions))
    return rows_mat, np.full(n_groups, 1.0 / n_groups)


def _assemble(values: np.ndarray, transitions: list[sp.spmatrix], relax: RelaxationOption, name: str,
              groups: np.ndarray | None = None) -> LpProblem:
    n_states = int(np.prod(values.shape[:-1]))
    K = values.shape[-1]
    if len(transitions) != K:
        raise ValueError(f"cost tensor has {K} actions but {len(transitions)} transition matrices were given")
    balance = balance_matrix(transitions, n_states)
    norm, mass = normalization_rows(n_states, K, groups)
    A = sp.vstack([norm, balance], format="csr")
    n_lo, n_up = np.array([relax.bounds(relax.normalization_sense, m) for m in mass]).T
    b_lo, b_up = relax.bounds(relax.balance_sense, 0.0, relax.band_lower)
    row_lower = np.concatenate([n_lo, np.full(n_states, b_lo)])
    row_upper = np.concatenate([n_up, np.full(n_states, b_up)])
    return LpProblem(values.ravel(), A, row_lower, row_upper, 0.0, INF, name=name)


def _tensor_values(costs: CostTensor | np.ndarray) -> np.ndarray:
    return costs.values if isinstance(costs, CostTensor) else np.asarray(costs, dtype=float)


def assemble_basic(costs: CostTensor | np.ndarray, transitions: list[sp.spmatrix] | FactoredChain,
                   relax: RelaxationOption = DEFAULT_RELAXATION, groups: np.ndarray | None = None) -> LpProblem:
    """LP over y[i, j, q, k]; ``costs`` has axes (i, j, q, k).

    A chain argument derives ``groups`` from the closed classes of its demand factor.
    """
    values = _tensor_values(costs)
    if values.ndim != 4:
        raise ValueError(f"basic MDP needs a 4-axis cost tensor, got {values.ndim} axes")
    if isinstance(transitions, FactoredChain):
        if transitions.n_peaks is not None or transitions.state_shape != values.shape[:-1]:
            raise ValueError("chain axes do not match the cost tensor")
        if groups is None:
            groups = state_groups(transitions)
        transitions = joint_transitions(transitions)
    return _assemble(values, transitions, relax, "MDPBASIC", groups)


def assemble_peak(costs: CostTensor | np.ndarray, transitions: list[sp.spmatrix] | FactoredChain,
                  relax: RelaxationOption = DEFAULT_RELAXATION, groups: np.ndarray | None = None) -> LpProblem:
    """LP over y[i, j, q, r, k]; ``costs`` has axes (i, j, q, r, k).

    A chain argument derives ``groups`` from the closed classes of its demand factor.
    """
    values = _tensor_values(costs)
    if values.ndim != 5:
        raise ValueError(f"peak MDP needs a 5-axis cost tensor, got {values.ndim} axes")
    if isinstance(transitions, FactoredChain):
        if transitions.n_peaks is None or transitions.state_shape != values.shape[:-1]:
            raise ValueError("chain axes do not match the cost tensor")
        if groups is None:
            groups = state_groups(transitions)
        transitions = joint_transitions(transitions)
    return _assemble(values, transitions, relax, "MDPPEAK", groups)


def check_solution(y: np.ndarray, transitions: list[sp.spmatrix] | FactoredChain,
                   tolerance: float = CHECK_TOL) -> ViolationReport:
    """Check ``y`` against the unrelaxed constraints: total mass 1 and exact balance."""
    if isinstance(transitions, FactoredChain):
        transitions = joint_transitions(transitions)
    n_states = transitions[0].shape[0]
    y = np.asarray(y, dtype=float)
    if y.size != n_states * len(transitions):
        raise ValueError("solution length does not match the state space")
    resid = balance_matrix(transitions, n_states) @ y
    worst = int(np.argmax(np.abs(resid)))
    return ViolationReport(
        max_normalization_violation=float(abs(y.sum() - 1.0)),
        max_balance_violation=float(np.abs(resid[worst])),
        worst_state=worst,
        tolerance=tolerance,
    )
