"""Command-line pipeline: synth, fit, train, simulate, ideal, report.

Every command reads a JSON config (``--config``) validated against
``CONFIG_SCHEMA``; a few flags override config keys. Outputs land under
``--out`` with fixed names. Exit codes: 0 success, 2 bad config or input,
3 solver failure, 4 constraint violations above tolerance.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from .battery_pricing import BatteryParams, CostCase, PricingPolicy
from .data_io import LoadDataError, LoadSeries, SyntheticLoadSpec, generate_synthetic, load_csv, split_train_test, \
    write_csv
from .ideal_oracle import IdealProblemSpec, OracleError, build_program, ideal_schedule
from .lp_core import export_mps
from .markov_chain import PeakThresholds
from .mdp_program import RelaxationOption, StateSpace
from .pipeline import demand_chain, train_mdp
from .policy_engine import Policy
from .quantile_fourier import DEFAULT_BETAS, DEFAULT_N_WAVES, QuantileSet, fit, mean_pinball
from .simulator import ConfigMismatchError, SimulationResult, efficiency, simulate_year

log = logging.getLogger("battmdp")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_VIOLATION = 0, 2, 3, 4

FILES = {
    "data": "load.csv",
    "quantiles": "quantiles.json",
    "fit_diagnostics": "fit_diagnostics.csv",
    "transitions": "demand_transitions.csv",
    "policy": "policy.csv",
    "train_meta": "train.json",
    "violations": "violations.json",
    "sim": "sim.json",
    "trace": "trace.csv",
    "daily_peaks": "daily_peaks.csv",
    "ideal": "ideal.json",
    "ideal_trace": "ideal_trace.csv",
    "efficiency": "efficiency.json",
    "profiles": "daily_profiles.csv",
    "sweep": "sweep.csv",
    "log": "run.log",
}

_num = {"type": "number"}
_prices = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 24, "maxItems": 24}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "data_csv": {"type": "string"},
                "train_csv": {"type": "string"},
                "test_csv": {"type": "string"},
                "out_dir": {"type": "string"},
            },
        },
        "synthetic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "base_kwh": _num, "daily_amplitude_kwh": _num, "seasonal_amplitude_kwh": _num,
                "noise_std_kwh": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"}, "n_days": {"type": "integer", "minimum": 1},
            },
        },
        "battery": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "capacity_kwh": {"type": "number", "exclusiveMinimum": 0},
                "efficiency": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "initial_soc": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "pricing": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["A", "B", "C", "D"]},
                "tou_schedule": _prices,
                "realtime_prices": _prices,
                "limit_kwh": {"type": "number", "exclusiveMinimum": 0},
                "low_price": {"type": "number", "minimum": 0},
                "high_price": {"type": "number", "minimum": 0},
                "energy_price": {"type": "number", "minimum": 0},
                "peak_price": {"type": "number", "minimum": 0},
            },
        },
        "case_id": {"enum": [1, 2, 3]},
        "n_waves": {"type": "integer", "minimum": 1},
        "betas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                  "minItems": 1},
        "peak_thresholds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "increment_kw": {"type": "number", "exclusiveMinimum": 0},
                "boundaries": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "use_peak_axis": {"type": "boolean"},
        "relaxation": {"enum": [1, 2, 3, 4, 5, 6]},
        "seed": {"type": "integer", "minimum": 0},
        "horizon_hours": {"type": ["integer", "null"], "minimum": 24},
        "violation_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "sweep_counts": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lp_method": {"enum": ["highs", "highs-ipm", "simplex"]},
                "mip_method": {"enum": ["highs", "bnb"]},
                "time_limit": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
    },
}


class InputError(Exception):
    """Bad config or input files (exit code 2)."""


@dataclasses.dataclass
class RunConfig:
    raw: dict
    out: Path

    @property
    def paths(self) -> dict:
        return self.raw.get("paths", {})

    def battery(self) -> BatteryParams:
        return BatteryParams(**self.raw.get("battery", {}))

    def pricing(self) -> PricingPolicy:
        return PricingPolicy(**self.raw.get("pricing", {"kind": "A"}))

    def case(self) -> CostCase:
        return CostCase(self.raw.get("case_id", 2))

    def relaxation(self) -> RelaxationOption:
        return RelaxationOption.get(self.raw.get("relaxation", 3))

    def solver(self, key: str, default):
        return self.raw.get("solver", {}).get(key, default)

    def thresholds(self, count: int | None = None) -> PeakThresholds | None:
        if not (self.pricing().bills_peak or self.raw.get("use_peak_axis", False) or count):
            return None
        spec = self.raw.get("peak_thresholds", {})
        if count is None and "boundaries" in spec:
            return PeakThresholds(tuple(spec["boundaries"]))
        return PeakThresholds.uniform(count or spec.get("count", 6), spec.get("increment_kw", 100.0))

    def path(self, key: str) -> Path:
        return self.out / FILES[key]

    def _series(self, key: str) -> LoadSeries | None:
        p = self.paths.get(key)
        return load_csv(p) if p else None

    def train_test(self) -> tuple[LoadSeries, LoadSeries]:
        train, test = self._series("train_csv"), self._series("test_csv")
        if train is not None and test is not None:
            return train, test
        data = self._series("data_csv")
        if data is None and self.path("data").exists():
            data = load_csv(self.path("data"))
        if data is None:
            raise InputError("no load data: set paths.train_csv/test_csv or paths.data_csv, or run 'synth'")
        tr, te = split_train_test(data)
        return (train if train is not None else tr), (test if test is not None else te)

    def test_horizon(self, test: LoadSeries) -> LoadSeries:
        h = self.raw.get("horizon_hours")
        return test if h is None else test.head(min(h, len(test)))


def load_config(path: str | None, overrides: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise InputError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc}") from None
    for flag, key in (("seed", "seed"), ("case", "case_id"), ("relaxation", "relaxation"),
                      ("horizon", "horizon_hours")):
        value = getattr(overrides, flag, None)
        if value is not None:
            raw[key] = value
    if getattr(overrides, "pricing", None):
        raw.setdefault("pricing", {})["kind"] = overrides.pricing
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise InputError(f"config invalid at {where}: {exc.message}") from None
    out = Path(overrides.out or raw.get("paths", {}).get("out_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return RunConfig(raw, out)


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path, hint: str) -> dict:
    if not path.exists():
        raise InputError(f"{path} is missing; run '{hint}' first")
    return json.loads(path.read_text(encoding="utf-8"))


def cmd_synth(cfg: RunConfig) -> int:
    syn = dict(cfg.raw.get("synthetic", {}))
    syn.setdefault("n_days", 730)
    series = generate_synthetic(SyntheticLoadSpec(**syn))
    write_csv(series, cfg.path("data"))
    log.info("wrote %d hours of synthetic load", len(series))
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    train, _ = cfg.train_test()
    n_waves = cfg.raw.get("n_waves", DEFAULT_N_WAVES)
    betas = cfg.raw.get("betas", list(DEFAULT_BETAS))
    models = []
    t = train.hour_of_day().astype(float)
    with cfg.path("fit_diagnostics").open("w", encoding="utf-8") as fh:
        fh.write("beta,n_waves,pinball_loss\n")
        for beta in betas:
            m = fit(train, beta, n_waves)
            models.append(m)
            fh.write(f"{beta!r},{n_waves},{mean_pinball(m, train.values, t)!r}\n")
    QuantileSet(tuple(models)).save(cfg.path("quantiles"))
    log.info("fitted %d quantile models with %d waves", len(models), n_waves)
    return EXIT_OK


def _load_qset(cfg: RunConfig) -> QuantileSet:
    if not cfg.path("quantiles").exists():
        raise InputError(f"{cfg.path('quantiles')} is missing; run 'fit' first")
    return QuantileSet.load(cfg.path("quantiles"))


def cmd_train(cfg: RunConfig) -> int:
    qset = _load_qset(cfg)
    train, _ = cfg.train_test()
    demand = demand_chain(qset, train)
    demand.to_csv(cfg.path("transitions"))
    pricing = cfg.pricing()
    trained = train_mdp(qset, demand, cfg.battery(), pricing, cfg.case(), cfg.thresholds(), cfg.relaxation(),
                        lp_method=cfg.solver("lp_method", "highs"), time_limit=cfg.solver("time_limit", None))
    p = trained.problem
    log.info("assembled MDP LP: %d variables, %d constraints (%d rows)", p.n_vars, p.constraint_count(), p.n_rows)
    space = StateSpace.of(trained.chain)
    meta = {
        "pricing": pricing.kind.value,
        "case_id": cfg.case().case_id,
        "state_shape": list(space.shape),
        "n_actions": space.n_actions,
        "thresholds": list(trained.thresholds.boundaries) if trained.thresholds else None,
        "n_vars": p.n_vars,
        "n_constraints": p.constraint_count(),
        "relaxation": cfg.relaxation().id,
        "status": trained.solution.status.value,
        "objective": trained.solution.objective if trained.solution.optimal else None,
    }
    _write_json(cfg.path("train_meta"), meta)
    if not trained.solution.optimal:
        log.error("MDP LP not solved: %s", trained.solution.status.value)
        return EXIT_SOLVER
    tol = cfg.raw.get("violation_tolerance")
    report = trained.violations
    if tol is not None:
        report = dataclasses.replace(report, tolerance=tol)
    report.to_json(cfg.path("violations"))
    trained.policy.to_csv(cfg.path("policy"))
    log.info("MDP objective %.6g; %s", trained.solution.objective, report.diagnosis())
    if not report.passed:
        log.error("solution violates the original constraints (%s)", report.diagnosis())
        return EXIT_VIOLATION
    return EXIT_OK


def _load_policy(cfg: RunConfig, pricing: PricingPolicy) -> tuple[Policy, PeakThresholds | None]:
    meta = _read_json(cfg.path("train_meta"), "train")
    if meta["pricing"] != pricing.kind.value or meta["case_id"] != cfg.case().case_id:
        raise ConfigMismatchError(
            f"policy was trained for pricing {meta['pricing']} case {meta['case_id']}, "
            f"config asks for pricing {pricing.kind.value} case {cfg.case().case_id}")
    if not cfg.path("policy").exists():
        raise InputError(f"{cfg.path('policy')} is missing; run 'train' first")
    shape = meta["state_shape"]
    space = StateSpace(*shape[:3], shape[3] if len(shape) == 4 else None, meta["n_actions"])
    thresholds = PeakThresholds(tuple(meta["thresholds"])) if meta["thresholds"] is not None else None
    return Policy.from_csv(cfg.path("policy"), space), thresholds


def cmd_simulate(cfg: RunConfig) -> int:
    pricing = cfg.pricing()
    policy, thresholds = _load_policy(cfg, pricing)
    _, test = cfg.train_test()
    result = simulate_year(policy, cfg.test_horizon(test), _load_qset(cfg), cfg.battery(), pricing, cfg.case(),
                           seed=cfg.raw.get("seed", 0), thresholds=thresholds)
    result.to_json(cfg.path("sim"))
    result.trace_csv(cfg.path("trace"))
    result.daily_peaks_csv(cfg.path("daily_peaks"))
    log.info("MDP bill %.2f, saving %.2f", result.bill_total, result.saving)
    return EXIT_OK


def cmd_ideal(cfg: RunConfig, export: str | None = None) -> int:
    _, test = cfg.train_test()
    spec = IdealProblemSpec(cfg.test_horizon(test), cfg.battery(), cfg.pricing(), cfg.case())
    if export:
        problem, _ = build_program(spec)
        export_mps(problem, export)
        log.info("exported ideal program (%d variables, %d binaries) to %s",
                 problem.n_vars, problem.n_binaries, export)
        return EXIT_OK
    try:
        result = ideal_schedule(spec, mip_method=cfg.solver("mip_method", "highs"),
                                lp_method=cfg.solver("lp_method", "highs"), time_limit=cfg.solver("time_limit", None))
    except OracleError as exc:
        log.error("%s (nodes %d)", exc, exc.solution.nodes)
        return EXIT_SOLVER
    result.to_json(cfg.path("ideal"))
    result.trace_csv(cfg.path("ideal_trace"))
    log.info("ideal bill %.2f, saving %.2f", result.bill_total, result.saving)
    return EXIT_OK


def _result_from_json(path: Path, hint: str) -> SimulationResult:
    d = _read_json(path, hint)
    return SimulationResult(d["bill_total"], d["bill_without_battery"], d["energy_cost"], d["peak_cost"], {},
                            np.zeros(0), d["corrections_applied"], d["meta"])


def _daily_profiles(cfg: RunConfig) -> None:
    """Average-day profile of load and battery energy for both runs."""
    def read(path):
        with path.open(encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return {k: np.array([float(r[k]) for r in rows]) for k in ("load", "battery_energy", "grid_energy")}
    mdp, ideal = read(cfg.path("trace")), read(cfg.path("ideal_trace"))
    hours = mdp["load"].size // 24
    avg = {name: {k: v[: hours * 24].reshape(-1, 24).mean(axis=0) for k, v in run.items()}
           for name, run in (("mdp", mdp), ("ideal", ideal))}
    with cfg.path("profiles").open("w", encoding="utf-8") as fh:
        fh.write("hour,load,mdp_battery,mdp_grid,ideal_battery,ideal_grid\n")
        for h in range(24):
            fh.write(f"{h + 1},{avg['mdp']['load'][h]!r},{avg['mdp']['battery_energy'][h]!r},"
                     f"{avg['mdp']['grid_energy'][h]!r},{avg['ideal']['battery_energy'][h]!r},"
                     f"{avg['ideal']['grid_energy'][h]!r}\n")


def cmd_report(cfg: RunConfig, sweep: bool = False) -> int:
    ideal = _result_from_json(cfg.path("ideal"), "ideal")
    if sweep:
        return _sweep(cfg, ideal)
    mdp = _result_from_json(cfg.path("sim"), "simulate")
    report = efficiency(mdp, ideal)
    report.to_json(cfg.path("efficiency"))
    if cfg.path("trace").exists() and cfg.path("ideal_trace").exists():
        _daily_profiles(cfg)
    log.info("MDP efficiency: %s", "n/a" if report.efficiency_pct is None else f"{report.efficiency_pct:.2f}%")
    return EXIT_OK


def _sweep(cfg: RunConfig, ideal: SimulationResult) -> int:
    """Threshold-count sweep: one peak MDP per count, scored against the stored ideal run."""
    qset = _load_qset(cfg)
    train, test = cfg.train_test()
    test = cfg.test_horizon(test)
    demand = demand_chain(qset, train)
    pricing, case, battery = cfg.pricing(), cfg.case(), cfg.battery()
    rows = []
    for count in cfg.raw.get("sweep_counts", [6, 11, 21]):
        started = time.perf_counter()
        th = cfg.thresholds(count)
        trained = train_mdp(qset, demand, battery, pricing, case, th, cfg.relaxation(),
                            lp_method=cfg.solver("lp_method", "highs"), time_limit=cfg.solver("time_limit", None))
        if not trained.solution.optimal:
            log.error("sweep: MDP with %d thresholds not solved", count)
            return EXIT_SOLVER
        sim = simulate_year(trained.policy, test, qset, battery, pricing, case, cfg.raw.get("seed", 0), th)
        eff = efficiency(sim, ideal).efficiency_pct
        rows.append((count, eff, trained.problem.n_vars, trained.problem.constraint_count(),
                     time.perf_counter() - started))
        log.info("sweep: %d thresholds -> efficiency %s", count, eff)
    with cfg.path("sweep").open("w", encoding="utf-8") as fh:
        fh.write("thresholds,efficiency_pct,n_vars,n_constraints,wall_seconds\n")
        for c, e, nv, nc, sec in rows:
            fh.write(f"{c},{'' if e is None else repr(e)},{nv},{nc},{sec:.3f}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="battmdp", description="Battery dispatch MDP toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("synth", "write a synthetic two-year load CSV"),
                            ("fit", "fit the quantile Fourier models"),
                            ("train", "solve the MDP LP and extract the policy"),
                            ("simulate", "run the policy over the test year"),
                            ("ideal", "solve the perfect-foresight schedule"),
                            ("report", "efficiency report and plot data")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides paths.out_dir)")
        p.add_argument("--seed", type=int)
        p.add_argument("--case", type=int)
        p.add_argument("--pricing", choices=["A", "B", "C", "D"])
        p.add_argument("--relaxation", type=int)
        p.add_argument("--horizon", type=int, help="trim the test year to its first HORIZON hours")
        if name == "ideal":
            p.add_argument("--export-mps", metavar="PATH", help="write the program as MPS instead of solving")
        if name == "report":
            p.add_argument("--sweep", action="store_true", help="threshold-count sweep for the peak MDP")
    return parser


def _setup_logging(out: Path) -> None:
    root = logging.getLogger("battmdp")
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    file_handler = logging.FileHandler(out / FILES["log"], encoding="utf-8")
    file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(file_handler)
    root.addHandler(console)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _setup_logging(cfg.out)
    try:
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "ideal":
            return cmd_ideal(cfg, args.export_mps)
        return cmd_report(cfg, args.sweep)
    except (InputError, LoadDataError, ConfigMismatchError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
