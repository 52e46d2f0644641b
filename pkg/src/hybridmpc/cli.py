"""Command-line front end: ``run``, ``compare``, ``sweep`` and ``validate``.

Exit codes: 0 ok, 2 configuration or usage error, 3 solver failure,
4 invariant violation.  Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import jsonschema
import numpy as np
import yaml

from . import admm, oracle, plots
from .admm.solver import SolverError, SolverOptions
from .convex import ProblemError, assemble
from .models import DomainError, PowertrainParams, Topology
from .mpc import (
    DemandError,
    InvariantError,
    MissionError,
    MissionResult,
    Scenario,
    Strategy,
    apply_windmilling,
    compare_strategies,
    run_closed_loop,
    summary_text,
    write_mission_csv,
    write_timing_csv,
)
from .schedule import CoverageError, InfeasibleBoundsError, ProfileError, build_schedule, data_path

log = logging.getLogger("hybridmpc")

SCHEMA_VERSION = 1
SWEEP_AXES = ("battery_mass", "max_altitude", "max_tas", "eps_rel", "F_sigma", "N", "R", "beta1_scale")
SWEEP_COLUMNS = (
    "axis", "value", "N", "admm_status", "admm_iterations", "admm_objective_kg",
    "barrier_objective_kg", "objective_gap_rel", "relaxation_gap", "barrier_newton_steps",
)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# scenario documents


def load_schema() -> dict:
    with data_path("scenario.schema.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def default_scenario_path() -> Path:
    return data_path("default_scenario.yaml")


def read_document(path) -> dict:
    """Parse and schema-check a scenario file."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: scenario must be a mapping")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: schema violation at {where}: {e.message}")
    return doc


def _resolve(base: Path, value: Optional[str], what: str) -> Optional[str]:
    if value is None:
        return None
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return str(p)


def scenario_from_document(doc: dict, base_dir=".") -> Scenario:
    """Build a :class:`Scenario`; missing keys take the built-in defaults."""
    base = Path(base_dir)
    try:
        params = PowertrainParams(**{
            k: tuple(v) if isinstance(v, list) else v for k, v in doc.get("params", {}).items()
        })
        mission = doc.get("mission", {})
        tables = doc.get("tables", {})
        wind = doc.get("windmilling", {})
        solver_doc = dict(doc.get("solver", {}))
        if "sigma0" in solver_doc:
            solver_doc["sigma0"] = tuple(solver_doc["sigma0"])
        solver = SolverOptions(**solver_doc)
        return Scenario(
            params=params,
            strategy=doc.get("strategy", Strategy.VARIABLE_MASS),
            delta=float(mission.get("delta", 60.0)),
            m0=mission.get("m0"),
            E0=mission.get("E0"),
            profile_path=_resolve(base, mission.get("profile"), "profile"),
            max_altitude=mission.get("max_altitude"),
            max_tas=mission.get("max_tas"),
            motor_table_path=_resolve(base, tables.get("motor"), "motor loss table"),
            generator_table_path=_resolve(base, tables.get("generator"), "generator loss table"),
            fuel_table_path=_resolve(base, tables.get("fuel"), "fuel map table"),
            fan_map_path=_resolve(base, tables.get("fan_map"), "fan map"),
            speed_ratio=float(tables.get("speed_ratio", 1.0)),
            table_extrapolation=tables.get("extrapolate", "error"),
            windmilling=float(wind.get("eta_w", 0.15)) if wind.get("enabled", False) else None,
            gt_power_cap_override=doc.get("gt_power_cap_override"),
            solver=solver,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    return scenario_from_document(read_document(path), path.parent)


def _override(scenario: Scenario, topology: Optional[str], strategy: Optional[str]) -> Scenario:
    try:
        if topology:
            scenario = scenario.with_(params=scenario.params.with_(topology=Topology.parse(topology)))
        if strategy:
            scenario = scenario.with_(strategy=Strategy.parse(strategy))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return scenario


# --------------------------------------------------------------------------
# commands


def _write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_traces(path, result: MissionResult) -> None:
    first = True
    for k, st in enumerate(result.stats):
        if st.trace is None:
            continue
        admm.write_trace(path, st, step_index=k, append=not first)
        first = False
    if first:
        _write_csv(path, ("step",) + admm.api.TRACE_COLUMNS, [])


def _with_baselines(scenario: Scenario, result: MissionResult) -> MissionResult:
    for s in (Strategy.CDCS, Strategy.GAS_TURBINE_ONLY):
        if s is not result.strategy:
            result.baselines[s.value] = run_closed_loop(scenario.with_(strategy=s)).fuel
    return result


def cmd_run(scenario: Scenario, out_dir, *, trace_steps: str = "first") -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = _with_baselines(scenario, run_closed_loop(scenario, trace_steps=trace_steps))
    write_mission_csv(out / "mission.csv", result)
    write_timing_csv(out / "timing.csv", result)
    _write_traces(out / "solver_trace.csv", result)
    lines = [summary_text([result])]
    for name, fuel in sorted(result.baselines.items()):
        lines.append(f"savings vs {name}: {result.savings_vs(fuel):.3f} % ({fuel:.3f} kg)\n")
    (out / "summary.txt").write_text("".join(lines), encoding="utf-8")
    plots.power_split(out / "power_split.svg", result)
    plots.soc_and_mass(out / "soc_mass.svg", result)
    print(f"{result.strategy.value} ({result.topology.value}): {result.fuel:.3f} kg fuel, "
          f"{result.n_steps} steps -> {out}")
    return EXIT_OK


def cmd_compare(scenario: Scenario, strategies: Sequence[str], out_dir) -> int:
    if len(strategies) < 2:
        raise UsageError("compare needs at least two strategies")
    try:
        parsed = [Strategy.parse(s) for s in strategies]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = compare_strategies(scenario, parsed)
    base = results[0]
    rows = []
    for i, r in enumerate(results, start=1):
        write_mission_csv(out / f"mission_{i}_{r.strategy.value}.csv", r)
        rows.append([i, r.strategy.value, repr(r.fuel), f"{r.savings_vs(base.fuel):.6f}",
                     repr(float(r.E[-1])), int(r.iterations.sum())])
    _write_csv(out / "compare.csv",
               ("rank", "strategy", "fuel_kg", "savings_pct", "final_soc_MJ", "iterations"), rows)
    (out / "summary.txt").write_text(summary_text(results, base), encoding="utf-8")
    plots.battery_overlay(out / "battery_overlay.svg", results)
    sys.stdout.write(summary_text(results, base))
    return EXIT_OK


def apply_axis(scenario: Scenario, axis: str, value: float) -> Scenario:
    """Scenario with one swept quantity replaced."""
    p = scenario.params
    if axis == "battery_mass":
        ratio = value / p.battery_mass
        lo, hi = p.soc_range
        E0 = None if scenario.E0 is None else scenario.E0 * ratio
        return scenario.with_(params=p.with_(battery_mass=value, soc_range=(lo * ratio, hi * ratio)), E0=E0)
    if axis == "max_altitude":
        return scenario.with_(max_altitude=value)
    if axis == "max_tas":
        return scenario.with_(max_tas=value)
    if axis == "eps_rel":
        return scenario.with_(solver=scenario.solver.with_(eps_rel=value))
    if axis == "F_sigma":
        return scenario.with_(solver=scenario.solver.with_(F_sigma=int(round(value))))
    if axis == "N":
        n = int(round(value))
        if n < 1:
            raise UsageError("N must be at least 1")
        return scenario.with_(delta=p.mission_time / n)
    if axis == "R":
        return scenario.with_(params=p.with_(battery_resistance=value))
    if axis == "beta1_scale":
        b2, b1, b0 = p.fuel_map
        return scenario.with_(params=p.with_(fuel_map=(b2, b1 * value, b0)))
    raise UsageError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def sweep_point(scenario: Scenario, axis: str, value: float) -> dict:
    """Open-loop solve of the full mission by ADMM and by the barrier oracle."""
    sc = apply_axis(scenario, axis, value)
    params = sc.effective_params
    sched = build_schedule(sc.flight_profile(), sc.tables(), params, sc.initial_mass)
    if sc.windmilling is not None:
        sched = apply_windmilling(sched, sc.windmilling, params)
    problem = assemble(sched, sc.initial_mass, sc.initial_soc, params,
                       constant_mass=sc.strategy is Strategy.CONSTANT_MASS)
    sol = admm.solve(problem, sc.solver.with_(trace=False))
    ref = oracle.barrier_solve(problem)
    n = params.n_systems
    return {
        "axis": axis, "value": value, "N": problem.N,
        "admm_status": sol.stats.status, "admm_iterations": sol.stats.iterations,
        "admm_objective_kg": n * sol.objective, "barrier_objective_kg": n * ref.objective,
        "objective_gap_rel": abs(sol.objective - ref.objective) / abs(ref.objective),
        "relaxation_gap": problem.relaxation_gap(sol),
        "barrier_newton_steps": ref.stats.iterations,
        "admm_wall_time_s": sol.stats.wall_time, "barrier_wall_time_s": ref.stats.wall_time,
    }


def _sweep_task(args):
    return sweep_point(*args)


def sweep_values(values: Sequence[float], random_count: int = 0, seed: int = 0) -> List[float]:
    """The values to run, sorted.  With ``random_count`` that many points are
    drawn uniformly between the smallest and largest listed value."""
    if not values:
        raise UsageError("sweep needs at least one value")
    if random_count:
        if len(values) < 2:
            raise UsageError("random sweeps need a lower and an upper value")
        rng = np.random.default_rng(seed)
        values = rng.uniform(min(values), max(values), size=random_count).tolist()
    return sorted(float(v) for v in values)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def cmd_sweep(scenario: Scenario, axis: str, values: Sequence[float], out_dir, *,
              jobs: int = 1, seed: int = 0, random_count: int = 0) -> int:
    if axis not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    vals = sweep_values(values, random_count, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(scenario, axis, v) for v in vals]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    rows.sort(key=lambda r: r["value"])
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS, [[_fmt(r[c]) for c in SWEEP_COLUMNS] for r in rows])
    _write_csv(out / "sweep_timing.csv", ("value", "admm_wall_time_s", "barrier_wall_time_s"),
               [[repr(r["value"]), f"{r['admm_wall_time_s']:.6f}", f"{r['barrier_wall_time_s']:.6f}"]
                for r in rows])
    x = [r["value"] for r in rows]
    if axis == "N":
        plots.sweep_plot(out / "scaling.svg", "N", x, {
            "wall time (s)": {"ADMM": [r["admm_wall_time_s"] for r in rows],
                              "barrier": [r["barrier_wall_time_s"] for r in rows]},
        }, loglog=True)
    plots.sweep_plot(out / "sweep.svg", axis, x, {
        "objective gap": [max(r["objective_gap_rel"], 1e-16) for r in rows],
        "ADMM iterations": [r["admm_iterations"] for r in rows],
    })
    for r in rows:
        print(f"{axis}={r['value']:g}: gap {r['objective_gap_rel']:.3e}, "
              f"{r['admm_iterations']} iterations, {r['admm_status']}")
    return EXIT_OK


def cmd_validate(path) -> int:
    load_scenario(path)
    print(f"{path}: ok (schema-version {SCHEMA_VERSION})")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridmpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    scenario_help = "scenario YAML, or 'default' for the built-in desk scenario"

    def common(p, out_default):
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--topology", choices=[t.value for t in Topology])
        p.add_argument("--strategy", help="strategy override")

    p = sub.add_parser("run", help="fly one mission")
    p.add_argument("scenario", help=scenario_help)
    common(p, "out/run")
    p.add_argument("--trace-steps", choices=("first", "all", "none"), default="first",
                   help="which MPC steps write their solver trace")

    p = sub.add_parser("compare", help="fly several strategies and tabulate fuel")
    p.add_argument("scenario", help=scenario_help)
    p.add_argument("strategies", nargs="*",
                   help="strategies, baseline first (default: the scenario's compare list)")
    common(p, "out/compare")

    p = sub.add_parser("sweep", help="open-loop ADMM vs barrier over one parameter")
    p.add_argument("scenario", help=scenario_help)
    p.add_argument("axis", choices=SWEEP_AXES)
    p.add_argument("values", nargs="*", type=float,
                   help="values to sweep (default: the scenario's sweep list)")
    common(p, "out/sweep")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--seed", type=int, default=0, help="seed for --random draws")
    p.add_argument("--random", type=int, default=0, metavar="K",
                   help="draw K values between the smallest and largest listed value")

    p = sub.add_parser("validate", help="schema check only")
    p.add_argument("scenario", help=scenario_help)
    return parser


def _scenario_path(arg: str) -> Path:
    return default_scenario_path() if arg == "default" else Path(arg)


def _fail(kind: str, code: int, exc: BaseException) -> int:
    payload = {"status": "error", "kind": kind, "exit_code": code,
               "type": type(exc).__name__, "message": str(exc)}
    step = getattr(exc, "step", None)
    if step is not None:
        payload["step"] = step
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        path = _scenario_path(args.scenario)
        if args.command == "validate":
            return cmd_validate(path)
        doc = read_document(path)
        scenario = _override(scenario_from_document(doc, Path(path).parent), args.topology, args.strategy)
        if args.command == "run":
            return cmd_run(scenario, args.out, trace_steps=args.trace_steps)
        if args.command == "compare":
            strategies = args.strategies or doc.get("compare", {}).get("strategies", [])
            return cmd_compare(scenario, strategies, args.out)
        values = args.values or doc.get("sweep", {}).get("values", [])
        return cmd_sweep(scenario, args.axis, values, args.out, jobs=args.jobs, seed=args.seed,
                         random_count=args.random)
    except (ConfigError, UsageError, ProfileError, CoverageError) as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except InvariantError as exc:
        return _fail("invariant", EXIT_INVARIANT, exc)
    except (MissionError, DemandError, SolverError, oracle.OracleInfeasible, InfeasibleBoundsError,
            ProblemError, DomainError) as exc:
        return _fail("solver", EXIT_SOLVER, exc)


if __name__ == "__main__":
    sys.exit(main())
