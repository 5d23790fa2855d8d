"""Sparse LP/MILP container shared by every program this package builds."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

INF = np.inf


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass
class LpProblem:
    """Minimize ``c @ x`` s.t. ``row_lower <= A @ x <= row_upper``, ``lower <= x <= upper``.

    Equality rows have ``row_lower == row_upper``; a ``<=`` row has
    ``row_lower == -inf``. ``integrality`` flags binary columns.
    """

    objective: np.ndarray
    A: sp.csr_matrix
    row_lower: np.ndarray
    row_upper: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integrality: np.ndarray | None = None
    var_names: list[str] | None = None
    row_names: list[str] | None = None
    name: str = "PROBLEM"
    objective_offset: float = 0.0

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.size
        self.A = sp.csr_matrix(self.A, dtype=float)
        if self.A.shape[1] != n:
            if self.A.shape[0] == 0:
                self.A = sp.csr_matrix((0, n))
            else:
                raise ValueError(f"constraint matrix has {self.A.shape[1]} columns, expected {n}")
        m = self.A.shape[0]
        self.row_lower = np.broadcast_to(np.asarray(self.row_lower, dtype=float), (m,)).copy()
        self.row_upper = np.broadcast_to(np.asarray(self.row_upper, dtype=float), (m,)).copy()
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if self.integrality is not None:
            self.integrality = np.asarray(self.integrality, dtype=bool)
            if self.integrality.shape != (n,):
                raise ValueError("integrality flags must have one entry per variable")
        self.validate()

    @classmethod
    def from_senses(cls, objective, A, senses, rhs, lower=0.0, upper=INF, **kwargs) -> "LpProblem":
        """Build from ``senses`` in {"L", "E", "G"} (``<=``, ``=``, ``>=``) and a right-hand side."""
        rhs = np.asarray(rhs, dtype=float)
        senses = np.asarray(list(senses))
        row_lower = np.where(senses == "L", -INF, rhs)
        row_upper = np.where(senses == "G", INF, rhs)
        if not np.isin(senses, ["L", "E", "G"]).all():
            raise ValueError("senses must be one of L, E, G")
        return cls(objective, A, row_lower, row_upper, lower, upper, **kwargs)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_binaries(self) -> int:
        return 0 if self.integrality is None else int(self.integrality.sum())

    def constraint_count(self) -> int:
        """Rows plus finite variable bounds, each counted as one constraint."""
        bounds = np.isfinite(self.lower).sum() + np.isfinite(self.upper).sum()
        return int(self.n_rows + bounds)

    def senses(self) -> np.ndarray:
        """Per-row sense: "E", "L", "G", "R" (ranged) or "N" (free)."""
        lo, up = self.row_lower, self.row_upper
        out = np.full(self.n_rows, "R", dtype="<U1")
        out[lo == up] = "E"
        out[np.isneginf(lo) & np.isfinite(up)] = "L"
        out[np.isfinite(lo) & np.isposinf(up)] = "G"
        out[np.isneginf(lo) & np.isposinf(up)] = "N"
        return out

    def validate(self) -> None:
        if self.A.nnz and not np.isfinite(self.A.data).all():
            raise ValueError("constraint matrix contains NaN or infinite coefficients")
        if not np.isfinite(self.objective).all():
            raise ValueError("objective contains NaN or infinite coefficients")
        if np.isnan(self.lower).any() or np.isnan(self.upper).any():
            raise ValueError("variable bounds contain NaN")
        if (self.lower > self.upper).any():
            bad = int(np.flatnonzero(self.lower > self.upper)[0])
            raise ValueError(f"variable {bad} has lower bound above upper bound")
        if (self.row_lower > self.row_upper).any():
            bad = int(np.flatnonzero(self.row_lower > self.row_upper)[0])
            raise ValueError(f"row {bad} has lower bound above upper bound")
        if self.integrality is not None and self.integrality.any():
            idx = self.integrality
            if (self.lower[idx] < 0).any() or (self.upper[idx] > 1).any():
                raise ValueError("integrality flags are only supported on [0, 1] variables")

    def primal_infeasibility(self, x: np.ndarray) -> float:
        """Largest violation of any row or bound at ``x``."""
        x = np.asarray(x, dtype=float)
        viol = 0.0
        if self.n_rows:
            ax = self.A @ x
            viol = max(viol, float(np.max(np.maximum(self.row_lower - ax, 0.0), initial=0.0)))
            viol = max(viol, float(np.max(np.maximum(ax - self.row_upper, 0.0), initial=0.0)))
        viol = max(viol, float(np.max(np.maximum(self.lower - x, 0.0), initial=0.0)))
        viol = max(viol, float(np.max(np.maximum(x - self.upper, 0.0), initial=0.0)))
        return viol

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.objective @ np.asarray(x, dtype=float)) + self.objective_offset

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LpProblem":
        """Copy sharing the matrix, with replaced variable bounds (used by branch-and-bound)."""
        out = object.__new__(LpProblem)
        out.__dict__.update(self.__dict__)
        out.lower = np.asarray(lower, dtype=float)
        out.upper = np.asarray(upper, dtype=float)
        return out

    def relaxation(self) -> "LpProblem":
        out = object.__new__(LpProblem)
        out.__dict__.update(self.__dict__)
        out.integrality = None
        return out


@dataclass
class LpSolution:
    status: LpStatus
    values: np.ndarray
    objective: float
    max_primal_infeasibility: float
    iterations: int = 0
    message: str = ""
    # branch-and-bound bookkeeping; zero for pure LPs
    nodes: int = 0
    gap: float = 0.0
    # d(objective)/d(row bound) per row; only the HiGHS LP route fills it
    row_duals: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    def to_csv(self, path) -> None:
        """Dump as ``var_index,value`` rows."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("var_index,value\n")
            for i, v in enumerate(self.values):
                fh.write(f"{i},{float(v)!r}\n")
