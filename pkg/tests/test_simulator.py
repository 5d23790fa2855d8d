import json
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from battmdp.battery_pricing import BatteryParams, CostCase, PricingPolicy
from battmdp.data_io import LoadSeries
from battmdp.markov_chain import PeakThresholds
from battmdp.mdp_program import StateSpace
from battmdp.policy_engine import extract_policy
from battmdp.simulator import ConfigMismatchError, SimulationResult, account, bill_without_battery, daily_peak, \
    efficiency, replay_schedule, simulate_year

BAT = BatteryParams()
START = datetime(2022, 1, 1)


def _result(saving, baseline=100_000.0, meta=None):
    return SimulationResult(baseline - saving, baseline, baseline - saving, 0.0, {}, np.zeros(0), 0, meta or {})


def test_daily_peak_examples():
    assert daily_peak(np.full(24, 300.0)) == 300.0
    assert daily_peak(np.arange(100.0, 124.0)) == 123.0
    day = np.full(24, 100.0)
    day[3], day[17] = -160.0, 340.0
    assert daily_peak(day) == 340.0
    with pytest.raises(ValueError):
        daily_peak(np.ones(23))


def test_bill_without_battery_examples():
    assert bill_without_battery(np.zeros(24), PricingPolicy("A"), CostCase(3)) == 0.0
    assert bill_without_battery(np.full(24, 250.0), PricingPolicy("C"), CostCase(2)) == pytest.approx(720.0)


def test_constant_load_peak_billing():
    load = np.full(24 * 365, 300.0)
    res = account(load, np.zeros(load.size), BAT, PricingPolicy("D"), CostCase(2))
    assert np.all(res.daily_peaks == 300.0)
    assert res.peak_cost == pytest.approx(7 * 300 * 365)
    assert res.saving == pytest.approx(0.0)


def test_peak_shaving_day():
    load = np.full(24, 200.0)
    load[17] = 340.0
    u = np.zeros(24)
    u[17] = -0.1  # 50 kWh out of storage, no losses
    res = replay_schedule(u, load, BAT, PricingPolicy("D"), CostCase(1))
    assert res.daily_peaks[0] == pytest.approx(290.0)
    assert res.saving == pytest.approx(7 * 50 + 0.05 * 50)
    assert res.corrections_applied == 0


def test_efficiency_examples():
    assert efficiency(_result(8964), _result(8965)).efficiency_pct == pytest.approx(99.988845, abs=1e-5)
    assert np.floor(efficiency(_result(8964), _result(8965)).efficiency_pct * 100) / 100 == 99.98
    assert efficiency(_result(13_674), _result(137_166)).efficiency_pct == pytest.approx(9.9689, abs=1e-4)
    assert efficiency(_result(50), _result(50)).efficiency_pct == pytest.approx(100.0)
    assert efficiency(_result(5), _result(0)).efficiency_pct is None
    with pytest.raises(ConfigMismatchError):
        efficiency(_result(1, meta={"case_id": 1}), _result(1, meta={"case_id": 2}))


def test_replay_corrects_infeasible_moves():
    u = np.array([0.5, -1.0, -1.0, 0.3] + [0.0] * 20)
    res = replay_schedule(u, np.full(24, 100.0), BAT, PricingPolicy("A"), CostCase(2))
    np.testing.assert_allclose(res.trace["u"][:4], [0.0, -1.0, 0.0, 0.3])
    np.testing.assert_allclose(res.trace["stored"][:4], [500.0, 0.0, 0.0, 150.0])
    assert res.corrections_applied == 2


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(np.round(np.linspace(-1, 1, 21), 1).tolist()), min_size=24, max_size=24),
       st.sampled_from("ABCD"))
def test_no_refund_never_cheaper(u, kind):
    load = 150 + 100 * np.sin(np.arange(24) / 3)
    pol = PricingPolicy(kind)
    c2 = replay_schedule(u, load, BAT, pol, CostCase(2))
    c3 = replay_schedule(u, load, BAT, pol, CostCase(3))
    assert c3.bill_total >= c2.bill_total - 1e-9
    assert c3.bill_total >= 0
    assert np.all((c3.trace["stored"] >= 0) & (c3.trace["stored"] <= BAT.capacity_kwh))


def test_account_rejects_storage_overflow():
    with pytest.raises(ValueError):
        account(np.full(24, 10.0), np.full(24, 0.5), BAT, PricingPolicy("A"), CostCase(2))


@pytest.fixture(scope="module")
def month(train_test):
    test = train_test[1]
    return LoadSeries(test.start_timestamp, test.values[: 24 * 30])


def _random_policy(space, seed):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 1, space.n_vars) * (rng.uniform(size=space.n_vars) < 0.3)
    return extract_policy(y, space)


def test_inert_policy_saves_nothing(month, qset):
    inert = extract_policy(np.zeros(StateSpace().n_vars), StateSpace())
    for kind in "ABC":
        res = simulate_year(inert, month, qset, BAT, PricingPolicy(kind), CostCase(2))
        assert res.bill_total == pytest.approx(res.bill_without_battery)
        assert res.saving == pytest.approx(0.0)


def test_simulation_is_deterministic_and_feasible(month, qset):
    pol = _random_policy(StateSpace(), 0)
    a = simulate_year(pol, month, qset, BAT, PricingPolicy("B"), CostCase(2), seed=3)
    b = simulate_year(pol, month, qset, BAT, PricingPolicy("B"), CostCase(2), seed=3)
    assert a.bill_total == b.bill_total
    np.testing.assert_array_equal(a.trace["u"], b.trace["u"])
    stored = a.trace["stored"]
    assert stored.min() >= 0 and stored.max() <= BAT.capacity_kwh
    c = simulate_year(pol, month, qset, BAT, PricingPolicy("B"), CostCase(2), seed=4)
    assert not np.array_equal(a.trace["u"], c.trace["u"])


def test_peak_policy_runs_and_mismatches_raise(month, qset):
    th = PeakThresholds()
    peak_pol = _random_policy(StateSpace(n_peaks=6), 1)
    res = simulate_year(peak_pol, month, qset, BAT, PricingPolicy("D"), CostCase(2), thresholds=th)
    assert res.daily_peaks.size == 30
    assert res.peak_cost == pytest.approx(7 * res.daily_peaks.sum())
    with pytest.raises(ConfigMismatchError):
        simulate_year(_random_policy(StateSpace(), 0), month, qset, BAT, PricingPolicy("D"), CostCase(2))
    with pytest.raises(ConfigMismatchError):
        simulate_year(peak_pol, month, qset, BAT, PricingPolicy("D"), CostCase(2), thresholds=PeakThresholds((1.0,)))


def test_outputs(month, qset, tmp_path):
    res = simulate_year(_random_policy(StateSpace(), 2), month, qset, BAT, PricingPolicy("A"), CostCase(1))
    res.to_json(tmp_path / "sim.json")
    data = json.loads((tmp_path / "sim.json").read_text())
    for key in ("bill_without_battery", "bill_total", "saving"):
        assert key in data
    assert data["meta"]["pricing"] == "A" and data["meta"]["hours"] == 720
    res.trace_csv(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "hour,load,u,battery_energy,grid_energy,stored,cost"
    assert len(lines) == 721
    res.daily_peaks_csv(tmp_path / "peaks.csv")
    assert len((tmp_path / "peaks.csv").read_text().splitlines()) == 31
