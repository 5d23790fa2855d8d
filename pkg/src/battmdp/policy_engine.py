"""Executable charging policies derived from MDP occupancy solutions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .battery_pricing import BatteryParams
from .lp_core import LpSolution
from .markov_chain import NO_OP_ACTION, SOC_LEVELS, action_rate
from .mdp_program import StateSpace

ZERO_MASS = 1e-12
PROB_TOL = 1e-9
CSV_HEADER = ["hour", "soc_index", "quantile", "peak_index", "action_k", "probability"]


@dataclass(frozen=True)
class ExecutionState:
    hour: int  # 1..24
    stored_kwh: float
    quantile: int  # 1..Q
    peak_so_far: float = 0.0
    day_index: int = 0


@dataclass(frozen=True)
class Policy:
    """Per-state action distribution over 1-based actions.

    ``probs`` has shape (n_states, n_actions) in the MDP's lexicographic state
    order; rows of zero-mass states carry the default action with probability 1.
    """

    probs: np.ndarray
    zero_mass: np.ndarray
    space: StateSpace
    default_action: int = NO_OP_ACTION
    source: str = "basic"

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.shape != (self.space.n_states, self.space.n_actions):
            raise ValueError("policy shape does not match the state space")
        if (p < 0).any() or np.abs(p.sum(axis=1) - 1).max() > PROB_TOL:
            raise ValueError("each state needs a probability distribution")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_cdf", np.cumsum(p, axis=1))
        object.__setattr__(self, "_deterministic", (p == 1.0).any(axis=1))

    @property
    def levels(self) -> int:
        return (self.space.n_actions - 1) // 2

    def state_index(self, hour: int, soc_index: int, quantile: int, peak_index: int | None = None) -> int:
        """Flat index from 1-based hour/quantile/peak and 0-based SoC level."""
        idx = (hour - 1, soc_index, quantile - 1)
        if self.space.n_peaks is not None:
            if peak_index is None:
                raise ValueError("peak policy needs a peak index")
            idx += (peak_index - 1,)
        return int(np.ravel_multi_index(idx, self.space.shape))

    def action_distribution(self, state: int) -> list[tuple[int, float]]:
        row = self.probs[state]
        return [(int(k) + 1, float(row[k])) for k in np.flatnonzero(row)]

    def sample_k(self, state: int, rng: np.random.Generator) -> int:
        """1-based action; deterministic states do not consume randomness."""
        if self._deterministic[state]:
            return int(np.argmax(self.probs[state])) + 1
        cdf = self._cdf[state]
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return min(k, self.space.n_actions - 1) + 1

    def to_csv(self, path) -> None:
        shape = self.space.shape
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for s, k in zip(*np.nonzero(self.probs)):
                coords = np.unravel_index(s, shape)
                peak = int(coords[3]) + 1 if len(shape) == 4 else 0
                w.writerow([int(coords[0]) + 1, int(coords[1]), int(coords[2]) + 1, peak, int(k) + 1,
                            repr(float(self.probs[s, k]))])

    @classmethod
    def from_csv(cls, path, space: StateSpace, default_action: int = NO_OP_ACTION) -> "Policy":
        probs = np.zeros((space.n_states, space.n_actions))
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != CSV_HEADER:
                raise ValueError(f"policy file must start with {','.join(CSV_HEADER)}")
            for row in reader:
                h, j, q, r, k = (int(v) for v in row[:5])
                idx = (h - 1, j, q - 1) + ((r - 1,) if space.n_peaks is not None else ())
                probs[np.ravel_multi_index(idx, space.shape), k - 1] = float(row[5])
        empty = probs.sum(axis=1) == 0
        probs[empty, default_action - 1] = 1.0
        return cls(probs, empty, space, default_action, "peak" if space.n_peaks else "basic")


def extract_policy(y: LpSolution | np.ndarray, space: StateSpace, default_action: int = NO_OP_ACTION) -> Policy:
    """Conditional action distribution y[s, k] / sum_k y[s, k]; tiny masses become the no-op."""
    values = y.values if isinstance(y, LpSolution) else np.asarray(y, dtype=float)
    if values.size != space.n_vars:
        raise ValueError("solution length does not match the state space")
    occ = values.reshape(space.n_states, space.n_actions).copy()
    occ[occ < ZERO_MASS] = 0.0
    mass = occ.sum(axis=1)
    zero = mass < ZERO_MASS
    probs = np.zeros_like(occ)
    probs[~zero] = occ[~zero] / mass[~zero, None]
    probs[zero, default_action - 1] = 1.0
    return Policy(probs, zero, space, default_action, "basic" if space.n_peaks is None else "peak")


def soc_index(stored_kwh: float, battery: BatteryParams, levels: int = SOC_LEVELS) -> int:
    """Nearest grid level of a continuous storage value."""
    return int(np.clip(np.rint(stored_kwh / battery.capacity_kwh * levels), 0, levels))


def sample_action(policy: Policy, state: ExecutionState, rng: np.random.Generator, battery: BatteryParams,
                  peak_index: int | None = None) -> float:
    """Charge rate for the realized state (SoC snapped to the policy grid)."""
    j = soc_index(state.stored_kwh, battery, policy.levels)
    s = policy.state_index(state.hour, j, state.quantile, peak_index)
    return float(action_rate(policy.sample_k(s, rng), policy.levels))


def correct_step(prev_stored: float, u: float, battery: BatteryParams) -> tuple[float, float]:
    """Clip the move so storage stays in [0, C_B]; returns (stored', u')."""
    cap = battery.capacity_kwh
    raw = prev_stored + cap * u
    if raw > cap:
        return cap, 1.0 - prev_stored / cap
    if raw < 0:
        return 0.0, -prev_stored / cap
    return raw, u
