"""Battery energy model, tariffs, cost cases and the MDP cost tensor."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .markov_chain import SOC_LEVELS, N_HOURS, PeakThresholds, action_rates, peak_destinations, soc_transitions
from .quantile_fourier import QuantileSet, evaluate

DEFAULT_PENALTY = 1000.0
RATE_TOL = 1e-12
TIER_TOL = 1e-9  # kWh; rounding noise at the energy limit stays in the low tier

# Synthetic real-time curve: cheap overnight, morning ramp, evening spike.
DEFAULT_REALTIME = (
    0.045, 0.040, 0.038, 0.036, 0.037, 0.042, 0.060, 0.085, 0.095, 0.090, 0.080, 0.075,
    0.072, 0.075, 0.090, 0.120, 0.180, 0.240, 0.220, 0.160, 0.110, 0.080, 0.060, 0.050,
)


def default_tou(off_peak: float = 0.05, peak: float = 0.20, shoulder: float = 0.10) -> tuple[float, ...]:
    """Hourly TOU prices: off-peak 07:00-14:00, peak 14:00-20:00, shoulder otherwise."""
    prices = []
    for h in range(N_HOURS):  # clock hour starting the interval
        if 7 <= h < 14:
            prices.append(off_peak)
        elif 14 <= h < 20:
            prices.append(peak)
        else:
            prices.append(shoulder)
    return tuple(prices)


@dataclass(frozen=True)
class BatteryParams:
    capacity_kwh: float = 500.0
    efficiency: float = 0.92
    initial_soc: float = 1.0

    def __post_init__(self):
        if not self.capacity_kwh > 0:
            raise ValueError("battery capacity must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must lie in (0, 1]")
        if not 0 <= self.initial_soc <= 1:
            raise ValueError("initial SoC must lie in [0, 1]")

    @property
    def initial_stored(self) -> float:
        return self.initial_soc * self.capacity_kwh


class PricingKind(str, Enum):
    TOU_A = "A"
    REALTIME_B = "B"
    ENERGY_LIMIT_C = "C"
    PEAK_D = "D"


@dataclass(frozen=True)
class PricingPolicy:
    kind: PricingKind
    tou_schedule: tuple[float, ...] = field(default_factory=default_tou)
    realtime_prices: tuple[float, ...] = DEFAULT_REALTIME
    limit_kwh: float = 200.0
    low_price: float = 0.05
    high_price: float = 0.12
    energy_price: float = 0.05
    peak_price: float = 7.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PricingKind(self.kind))
        for name in ("tou_schedule", "realtime_prices"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != N_HOURS:
                raise ValueError(f"{name} needs {N_HOURS} hourly prices")
            object.__setattr__(self, name, vals)
        prices = (*self.tou_schedule, *self.realtime_prices, self.low_price, self.high_price,
                  self.energy_price, self.peak_price)
        if min(prices) < 0 or not np.isfinite(prices).all():
            raise ValueError("prices must be finite and nonnegative")
        if not self.limit_kwh > 0:
            raise ValueError("energy limit must be positive")

    def hourly_prices(self) -> np.ndarray:
        """Per-hour energy price; for policy C this is the low tier."""
        if self.kind is PricingKind.TOU_A:
            return np.array(self.tou_schedule)
        if self.kind is PricingKind.REALTIME_B:
            return np.array(self.realtime_prices)
        if self.kind is PricingKind.ENERGY_LIMIT_C:
            return np.full(N_HOURS, self.low_price)
        return np.full(N_HOURS, self.energy_price)

    @property
    def bills_peak(self) -> bool:
        return self.kind is PricingKind.PEAK_D


@dataclass(frozen=True)
class CostCase:
    case_id: int
    apply_losses: bool = field(init=False)
    refund_exports: bool = field(init=False)

    def __post_init__(self):
        flags = {1: (False, True), 2: (True, True), 3: (True, False)}
        if self.case_id not in flags:
            raise ValueError("case must be 1, 2 or 3")
        losses, refund = flags[self.case_id]
        object.__setattr__(self, "apply_losses", losses)
        object.__setattr__(self, "refund_exports", refund)


def effective_efficiency(battery: BatteryParams, case: CostCase) -> float:
    return battery.efficiency if case.apply_losses else 1.0


def battery_energy(u, battery: BatteryParams, case: CostCase):
    """Grid-side battery energy for charge rate ``u`` (scalar or array)."""
    u_arr = np.asarray(u, dtype=float)
    if (np.abs(u_arr) > 1 + RATE_TOL).any():
        raise ValueError("charge rate must lie in [-1, 1]")
    eta = effective_efficiency(battery, case)
    out = battery.capacity_kwh * np.maximum(eta * u_arr, u_arr / eta)
    return float(out) if out.ndim == 0 else out


def grid_energy(load, battery_kwh):
    return np.add(load, battery_kwh)


def step_energy(prev_stored: float, u: float, battery: BatteryParams) -> float:
    """Raw storage update; correction is left to the caller."""
    return prev_stored + battery.capacity_kwh * u


def hourly_cost(e_grid, hour, policy: PricingPolicy, case: CostCase):
    """Energy cost of ``e_grid`` kWh drawn during 1-based ``hour`` (peak charges excluded)."""
    e = np.asarray(e_grid, dtype=float)
    h = np.asarray(hour)
    if policy.kind is PricingKind.ENERGY_LIMIT_C:
        cost = np.where(e > policy.limit_kwh + TIER_TOL, policy.high_price, policy.low_price) * e
    else:
        cost = policy.hourly_prices()[(h - 1) % N_HOURS] * e
    if not case.refund_exports:
        cost = np.where(e < 0, 0.0, cost)
    return float(cost) if np.ndim(cost) == 0 else cost


@dataclass(frozen=True)
class CostTensor:
    """Per-(state, action) cost, axes (i, j, q[, r], k)."""

    values: np.ndarray
    penalty: float = DEFAULT_PENALTY
    infeasible: np.ndarray | None = None  # (S, K) flags
    accrual: np.ndarray | None = None  # peak-charge part of ``values``

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("cost tensor must be finite")

    @property
    def has_peak_axis(self) -> bool:
        return self.values.ndim == 5

    def to_csv(self, path) -> None:
        """One ``index...,cost`` row per entry with 1-based hour/quantile/peak/action."""
        names = ["hour", "soc_index", "quantile"] + (["peak_index"] if self.has_peak_axis else []) + ["action_k"]
        idx = np.indices(self.values.shape).reshape(self.values.ndim, -1).T
        offset = np.ones(self.values.ndim, dtype=int)
        offset[1] = 0  # SoC index is 0-based (0..10 <=> 0%..100%)
        idx = idx + offset
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(",".join(names) + ",cost\n")
            for row, v in zip(idx, self.values.ravel()):
                fh.write(",".join(map(str, row)) + f",{v!r}\n")


def demand_table(qset: QuantileSet, n_hours: int = N_HOURS) -> np.ndarray:
    """E_L(i, q) as a (hours, quantiles) array; hour i evaluates the curve at t = i - 1."""
    t = np.arange(n_hours, dtype=float)
    return np.stack([evaluate(m, t) for m in qset.models], axis=1)


def build_cost_tensor(qset: QuantileSet | np.ndarray, battery: BatteryParams, policy: PricingPolicy, case: CostCase,
                      thresholds: PeakThresholds | None = None, penalty: float = DEFAULT_PENALTY,
                      levels: int = SOC_LEVELS) -> CostTensor:
    """Cost C over (i, j, q[, r], k).

    ``qset`` may also be a ready (hours, quantiles) demand table. Policy D
    requires thresholds; its peak charge accrues as
    ``peak_price * (rep[r'] - rep[r])`` on every bucket rise.
    """
    table = qset if isinstance(qset, np.ndarray) else demand_table(qset)
    n_hours = table.shape[0]
    e_b = battery_energy(action_rates(levels), battery, case)
    e_g = table[:, :, None] + e_b[None, None, :]  # (i, q, k)
    hours = np.arange(1, n_hours + 1)[:, None, None]
    base = hourly_cost(e_g, hours, policy, case)
    infeasible = np.stack([s.infeasible for s in soc_transitions(levels)], axis=1)  # (j, k)
    pen = penalty * infeasible.astype(float)
    if thresholds is None:
        if policy.bills_peak:
            raise ValueError("peak pricing needs peak thresholds")
        values = base[:, None, :, :] + pen[None, :, None, :]
        return CostTensor(values, penalty, infeasible)
    raw, _ = peak_destinations(thresholds, table, e_b)  # (i, q, k, r)
    rep = thresholds.representative
    accrual = np.zeros(raw.shape)
    if policy.bills_peak:
        accrual = policy.peak_price * (rep[raw] - rep[None, None, None, :])
    # reorder accrual to (i, q, r, k)
    accrual = np.moveaxis(accrual, 3, 2)
    values = base[:, None, :, None, :] + pen[None, :, None, None, :] + accrual[:, None, :, :, :]
    return CostTensor(values, penalty, infeasible, np.broadcast_to(accrual[:, None], values.shape))
