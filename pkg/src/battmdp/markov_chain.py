"""Factored transition structures of the dispatch MDP.

The joint chain over (hour, SoC level, demand quantile[, peak threshold]) is
the product of independent factors: a deterministic clock, an action-driven
SoC move, the empirical quantile chain, and (for peak shaving) a
deterministic running-peak bucket update that depends on hour, quantile and
action. States are indexed lexicographically in that axis order, with the
last listed axis varying fastest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

ROW_SUM_TOL = 1e-12
N_HOURS = 24
SOC_LEVELS = 10  # SoC grid 0%, 10%, ..., 100%
N_SOC = SOC_LEVELS + 1
N_ACTIONS = 2 * SOC_LEVELS + 1  # u = -1.0, -0.9, ..., 1.0
N_QUANTILES = 9
NO_OP_ACTION = SOC_LEVELS + 1  # 1-based k for u = 0


def action_rate(k, levels: int = SOC_LEVELS):
    """Charge rate of 1-based action ``k``: ``(k - levels - 1) / levels``."""
    return (np.asarray(k) - levels - 1) / levels


def action_rates(levels: int = SOC_LEVELS) -> np.ndarray:
    return action_rate(np.arange(1, 2 * levels + 2), levels)


@dataclass(frozen=True)
class TransitionMatrix:
    rows: np.ndarray

    def __post_init__(self):
        m = np.array(self.rows, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("transition matrix must be square")
        if (m < 0).any() or (m > 1).any():
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.abs(m.sum(axis=1) - 1.0).max(initial=0.0) > ROW_SUM_TOL:
            raise ValueError("every row must sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "rows", m)

    @property
    def dim(self) -> int:
        return self.rows.shape[0]

    def __getitem__(self, idx):
        return self.rows[idx]

    def to_csv(self, path) -> None:
        lines = [",".join(f"{v:.15g}" for v in row) for row in self.rows]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class SocTransition:
    matrix: TransitionMatrix
    infeasible: np.ndarray  # per source level, True where the move was clamped


@dataclass(frozen=True)
class PeakThresholds:
    """Running-peak buckets: r=1 below the first boundary, r=R at or above the last."""

    boundaries: tuple[float, ...] = (100.0, 200.0, 300.0, 400.0, 500.0)

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.size and (np.diff(b) <= 0).any():
            raise ValueError("threshold boundaries must be strictly increasing")
        if b.size and b[0] <= 0:
            raise ValueError("threshold boundaries must be positive")
        object.__setattr__(self, "boundaries", tuple(float(v) for v in b))

    @classmethod
    def uniform(cls, count: int, increment: float) -> "PeakThresholds":
        """``count`` buckets with boundaries at ``increment, 2*increment, ...``."""
        if count < 1:
            raise ValueError("need at least one threshold")
        return cls(tuple(increment * np.arange(1, count)))

    @property
    def count(self) -> int:
        return len(self.boundaries) + 1

    @property
    def representative(self) -> np.ndarray:
        """Lower bound of each bucket; bucket 1 is represented by 0 kW."""
        return np.concatenate([[0.0], self.boundaries])

    def bucket(self, value):
        """1-based bucket of a peak value (values at a boundary go up)."""
        return np.searchsorted(self.boundaries, value, side="right") + 1


def estimate_demand_transitions(q_sequence, n_states: int = N_QUANTILES) -> TransitionMatrix:
    """Empirical first-order chain over 1-based quantile indices.

    Rows never visited (before the final step) become self-loops.
    """
    q = np.asarray(q_sequence)
    if q.size < 2:
        raise ValueError("need at least two observations")
    if q.min() < 1 or q.max() > n_states:
        raise ValueError(f"quantile indices must lie in 1..{n_states}")
    counts = np.zeros((n_states, n_states))
    np.add.at(counts, (q[:-1] - 1, q[1:] - 1), 1.0)
    visits = counts.sum(axis=1)
    out = np.eye(n_states)
    seen = visits > 0
    out[seen] = counts[seen] / visits[seen, None]
    return TransitionMatrix(out)


def closed_classes(matrix) -> np.ndarray:
    """Label each state with its closed communicating class (0-based), or -1 if transient."""
    P = np.asarray(matrix.rows if isinstance(matrix, TransitionMatrix) else matrix, dtype=float)
    n, labels = connected_components(sp.csr_matrix(P > 0), directed=True, connection="strong")
    leaves = np.zeros(n, dtype=bool)
    for c in range(n):
        members = labels == c
        leaves[c] = not (P[members][:, ~members] > 0).any()
    closed = np.flatnonzero(leaves)
    out = np.full(P.shape[0], -1)
    for new, c in enumerate(closed):
        out[labels == c] = new
    return out


def time_transition(n_hours: int = N_HOURS) -> TransitionMatrix:
    """Clock: hour i moves to i+1, the last hour wraps to the first."""
    return TransitionMatrix(np.roll(np.eye(n_hours), 1, axis=1))


def soc_transition(k: int, levels: int = SOC_LEVELS) -> SocTransition:
    """Deterministic SoC move for 1-based action ``k`` on a ``levels + 1`` grid.

    A move that would leave [0, levels] is clamped and flagged infeasible.
    """
    if not 1 <= k <= 2 * levels + 1:
        raise ValueError(f"action index must lie in 1..{2 * levels + 1}")
    step = k - levels - 1
    j = np.arange(levels + 1)
    target = j + step
    clamped = np.clip(target, 0, levels)
    m = np.zeros((levels + 1, levels + 1))
    m[j, clamped] = 1.0
    return SocTransition(TransitionMatrix(m), target != clamped)


def soc_transitions(levels: int = SOC_LEVELS) -> list[SocTransition]:
    return [soc_transition(k, levels) for k in range(1, 2 * levels + 2)]


def peak_destinations(thresholds: PeakThresholds, demand_table: np.ndarray, battery_energy: np.ndarray):
    """Vectorized running-peak update.

    ``demand_table`` is (hours, quantiles) kWh, ``battery_energy`` is per
    action. Returns ``(raw, dest)`` 0-based bucket arrays of shape
    (hours, quantiles, actions, R): ``raw`` is the bucket of
    ``max(representative[r], E_G)``; ``dest`` additionally resets to the first
    bucket after the last hour of the day.
    """
    rep = thresholds.representative
    grid = demand_table[:, :, None] + np.asarray(battery_energy)[None, None, :]
    peak = np.maximum(rep[None, None, None, :], grid[..., None])
    raw = thresholds.bucket(peak) - 1
    dest = raw.copy()
    dest[-1] = 0
    return raw, dest


def peak_transition(i: int, q: int, k: int, thresholds: PeakThresholds, demand_table: np.ndarray,
                    battery_energy: np.ndarray) -> TransitionMatrix:
    """R x R deterministic peak chain at 1-based hour ``i``, quantile ``q``, action ``k``."""
    _, dest = peak_destinations(thresholds, demand_table, battery_energy)
    R = thresholds.count
    m = np.zeros((R, R))
    m[np.arange(R), dest[i - 1, q - 1, k - 1]] = 1.0
    return TransitionMatrix(m)


@dataclass
class FactoredChain:
    """Component factors of the joint chain.

    ``peak_dest`` (hours, quantiles, actions, R), when present, adds the peak
    axis as the fastest-varying state coordinate.
    """

    time: np.ndarray  # (H, H)
    soc: np.ndarray  # (K, S, S)
    demand: np.ndarray  # (Q, Q)
    soc_infeasible: np.ndarray  # (K, S) bool
    peak_dest: np.ndarray | None = None
    peak_raw: np.ndarray | None = None

    @property
    def n_hours(self) -> int:
        return self.time.shape[0]

    @property
    def n_soc(self) -> int:
        return self.soc.shape[1]

    @property
    def n_quantiles(self) -> int:
        return self.demand.shape[0]

    @property
    def n_actions(self) -> int:
        return self.soc.shape[0]

    @property
    def n_peaks(self) -> int | None:
        return None if self.peak_dest is None else self.peak_dest.shape[-1]

    @property
    def state_shape(self) -> tuple[int, ...]:
        base = (self.n_hours, self.n_soc, self.n_quantiles)
        return base if self.peak_dest is None else base + (self.n_peaks,)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.state_shape))


def build_chain(demand: TransitionMatrix | np.ndarray, levels: int = SOC_LEVELS, n_hours: int = N_HOURS,
                peak_dest: np.ndarray | None = None, peak_raw: np.ndarray | None = None) -> FactoredChain:
    socs = soc_transitions(levels)
    D = demand.rows if isinstance(demand, TransitionMatrix) else np.asarray(demand, dtype=float)
    return FactoredChain(
        time=time_transition(n_hours).rows,
        soc=np.stack([s.matrix.rows for s in socs]),
        demand=D,
        soc_infeasible=np.stack([s.infeasible for s in socs]),
        peak_dest=peak_dest,
        peak_raw=peak_raw,
    )


def compose_basic(chain: FactoredChain, k: int) -> sp.csr_matrix:
    """Joint (i, j, q) -> (I, J, Q) matrix for 1-based action ``k``: a Kronecker product."""
    kr = sp.kron(sp.kron(sp.csr_matrix(chain.time), sp.csr_matrix(chain.soc[k - 1])), sp.csr_matrix(chain.demand))
    return sp.csr_matrix(kr)


def compose_peak(chain: FactoredChain, k: int) -> sp.csr_matrix:
    """Joint (i, j, q, r) -> (I, J, Q, R) matrix for 1-based action ``k``."""
    if chain.peak_dest is None:
        raise ValueError("chain has no peak axis")
    R = chain.n_peaks
    S, Q = chain.n_soc, chain.n_quantiles
    base = compose_basic(chain, k).tocoo()
    # decode source (i, q) of every basic entry to look up the peak destination
    src_i = base.row // (S * Q)
    src_q = base.row % Q
    r = np.arange(R)
    dest_r = chain.peak_dest[src_i, src_q, k - 1]  # (nnz, R)
    rows = (base.row[:, None] * R + r[None, :]).ravel()
    cols = (base.col[:, None] * R + dest_r).ravel()
    data = np.repeat(base.data, R)
    n = chain.n_states
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def compose(chain: FactoredChain, k: int) -> sp.csr_matrix:
    return compose_basic(chain, k) if chain.peak_dest is None else compose_peak(chain, k)


def joint_transitions(chain: FactoredChain) -> list[sp.csr_matrix]:
    """One joint matrix per action, 1-based ``k`` at list position ``k - 1``."""
    return [compose(chain, k) for k in range(1, chain.n_actions + 1)]
