"""Hour-by-hour execution of a dispatch policy and yearly billing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .battery_pricing import BatteryParams, CostCase, PricingPolicy, battery_energy, hourly_cost
from .data_io import HOURS_PER_DAY, LoadSeries
from .markov_chain import PeakThresholds
from .policy_engine import ExecutionState, Policy, correct_step, sample_action
from .quantile_fourier import QuantileSet, assign_quantiles

TRACE_HEADER = ["hour", "load", "u", "battery_energy", "grid_energy", "stored", "cost"]


class ConfigMismatchError(ValueError):
    """Two results (or a policy and a tariff) do not describe the same setup."""


def _load_values(load) -> np.ndarray:
    return np.asarray(load.values if isinstance(load, LoadSeries) else load, dtype=float)


def run_metadata(load, pricing: PricingPolicy, case: CostCase) -> dict:
    values = _load_values(load)
    return {
        "pricing": pricing.kind.value,
        "case_id": case.case_id,
        "hours": int(values.size),
        "load_sha256": hashlib.sha256(values.tobytes()).hexdigest(),
    }


@dataclass
class SimulationResult:
    bill_total: float
    bill_without_battery: float
    energy_cost: float
    peak_cost: float
    trace: dict[str, np.ndarray] = field(repr=False)
    daily_peaks: np.ndarray = field(repr=False)
    corrections_applied: int = 0
    meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)  # solver diagnostics, not part of the run identity

    @property
    def saving(self) -> float:
        return self.bill_without_battery - self.bill_total

    def to_dict(self) -> dict:
        return {
            "bill_without_battery": self.bill_without_battery,
            "bill_total": self.bill_total,
            "saving": self.saving,
            "energy_cost": self.energy_cost,
            "peak_cost": self.peak_cost,
            "corrections_applied": self.corrections_applied,
            "meta": self.meta,
            **({"solver": self.extra} if self.extra else {}),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def trace_csv(self, path) -> None:
        cols = [self.trace[k] for k in TRACE_HEADER[1:]]
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(",".join(TRACE_HEADER) + "\n")
            for t, row in enumerate(zip(*cols)):
                fh.write(f"{t + 1}," + ",".join(repr(float(v)) for v in row) + "\n")

    def daily_peaks_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write("day,peak_kw\n")
            for d, p in enumerate(self.daily_peaks):
                fh.write(f"{d + 1},{float(p)!r}\n")


def daily_peak(day_trace) -> float:
    day = np.asarray(day_trace, dtype=float)
    if day.shape != (HOURS_PER_DAY,):
        raise ValueError("a day has exactly 24 hourly values")
    return float(day.max())


def billed_peaks(grid: np.ndarray) -> np.ndarray:
    """Per-day running peak started from zero, i.e. max(0, daily max); a trailing partial day counts."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        return np.zeros(0)
    return np.maximum(np.maximum.reduceat(grid, np.arange(0, grid.size, HOURS_PER_DAY)), 0.0)


def account(load, u: np.ndarray, battery: BatteryParams, pricing: PricingPolicy, case: CostCase,
            bill_without: float | None = None, corrections: int = 0,
            stored: np.ndarray | None = None) -> SimulationResult:
    """Bill an already-feasible rate sequence ``u``.

    ``stored`` is the storage path when the caller tracked it step by step;
    otherwise it is rebuilt from ``u``.
    """
    values = _load_values(load)
    if pricing.bills_peak and values.size % HOURS_PER_DAY:
        raise ValueError("peak billing needs whole days")
    u = np.asarray(u, dtype=float)
    e_b = battery_energy(u, battery, case)
    e_g = values + e_b
    hours = np.arange(values.size) % HOURS_PER_DAY + 1
    cost = hourly_cost(e_g, hours, pricing, case)
    if stored is None:
        stored = battery.initial_stored + battery.capacity_kwh * np.cumsum(u)
    if stored.size and (stored.min() < -1e-6 or stored.max() > battery.capacity_kwh + 1e-6):
        raise ValueError("rate sequence leaves the storage range")
    peaks = billed_peaks(e_g)
    peak_cost = pricing.peak_price * float(peaks.sum()) if pricing.bills_peak else 0.0
    energy = float(cost.sum())
    total = energy + peak_cost
    if bill_without is None:
        bill_without = bill_without_battery(values, pricing, case)
    trace = {"load": values, "u": u, "battery_energy": e_b, "grid_energy": e_g, "stored": stored, "cost": cost}
    return SimulationResult(total, bill_without, energy, peak_cost, trace, peaks, corrections,
                            run_metadata(values, pricing, case))


def bill_without_battery(load, pricing: PricingPolicy, case: CostCase) -> float:
    values = _load_values(load)
    hours = np.arange(values.size) % HOURS_PER_DAY + 1
    energy = float(hourly_cost(values, hours, pricing, case).sum())
    if pricing.bills_peak:
        energy += pricing.peak_price * float(billed_peaks(values).sum())
    return energy


def replay_schedule(u_requested, load, battery: BatteryParams, pricing: PricingPolicy,
                    case: CostCase) -> SimulationResult:
    """Apply the storage correction to a planned rate sequence and bill it."""
    stored = battery.initial_stored
    u_out = np.empty(len(u_requested))
    path = np.empty(len(u_requested))
    corrections = 0
    for t, u in enumerate(np.asarray(u_requested, dtype=float)):
        stored, u_out[t] = correct_step(stored, float(u), battery)
        path[t] = stored
        corrections += int(u_out[t] != u)
    return account(load, u_out, battery, pricing, case, corrections=corrections, stored=path)


def simulate_year(policy: Policy, test: LoadSeries, qset: QuantileSet, battery: BatteryParams,
                  pricing: PricingPolicy, case: CostCase, seed: int = 0,
                  thresholds: PeakThresholds | None = None) -> SimulationResult:
    """Execute ``policy`` on the observed test load.

    The quantile state comes from the observed load, SoC is tracked in kWh and
    snapped to the grid for lookup, and (for peak policies) the running daily
    peak is bucketed by ``thresholds``.
    """
    peak_policy = policy.space.n_peaks is not None
    if pricing.bills_peak and not peak_policy:
        raise ConfigMismatchError("peak pricing needs a policy trained with the peak axis")
    if peak_policy and (thresholds is None or thresholds.count != policy.space.n_peaks):
        raise ConfigMismatchError("peak policy needs matching thresholds")
    if policy.space.n_hours != HOURS_PER_DAY:
        raise ConfigMismatchError("policy clock does not have 24 hours")
    values = test.values
    q_obs = assign_quantiles(qset, values, test.hour_of_day())
    if len(qset.models) != policy.space.n_quantiles:
        raise ConfigMismatchError("quantile set and policy disagree on the quantile count")
    rng = np.random.default_rng(seed)
    stored = battery.initial_stored
    u_out = np.empty(values.size)
    path = np.empty(values.size)
    corrections = 0
    running_peak = 0.0
    for t in range(values.size):
        hour = t % HOURS_PER_DAY + 1
        if hour == 1:
            running_peak = 0.0
        state = ExecutionState(hour, stored, int(q_obs[t]), running_peak, t // HOURS_PER_DAY)
        r = int(thresholds.bucket(running_peak)) if peak_policy else None
        u = sample_action(policy, state, rng, battery, r)
        stored, u_out[t] = correct_step(stored, u, battery)
        path[t] = stored
        corrections += int(u_out[t] != u)
        if peak_policy:
            running_peak = max(running_peak, values[t] + battery_energy(u_out[t], battery, case))
    return account(values, u_out, battery, pricing, case, corrections=corrections, stored=path)


@dataclass(frozen=True)
class EfficiencyReport:
    bill_without_battery: float
    mdp_bill: float
    mdp_saving: float
    ideal_bill: float
    ideal_saving: float
    efficiency_pct: float | None

    def to_dict(self) -> dict:
        return {
            "bill_without_battery": self.bill_without_battery,
            "mdp_bill": self.mdp_bill,
            "mdp_saving": self.mdp_saving,
            "ideal_bill": self.ideal_bill,
            "ideal_saving": self.ideal_saving,
            "efficiency_pct": self.efficiency_pct,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def efficiency(mdp: SimulationResult, ideal: SimulationResult) -> EfficiencyReport:
    """100 * MDP saving / ideal saving; None when the ideal saves nothing."""
    if mdp.meta and ideal.meta and mdp.meta != ideal.meta:
        raise ConfigMismatchError(f"runs differ: {mdp.meta} vs {ideal.meta}")
    pct = 100.0 * mdp.saving / ideal.saving if ideal.saving > 0 else None
    return EfficiencyReport(mdp.bill_without_battery, mdp.bill_total, mdp.saving,
                            ideal.bill_total, ideal.saving, pct)
