"""Shrinking-horizon closed-loop mission simulation.

At every sampling instant the schedule is rebuilt from the current aircraft
mass, the convex program is solved over the remaining mission, and the first
battery power is applied to a plant that uses the same models as the
predictor.  Masses in a :class:`MissionResult` are whole-aircraft values;
fuel rates, powers and SOC are per propulsion system.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import admm
from .admm.solver import SolverOptions
from .convex import ConvexProblem, SolverStats, assemble, f_phi
from .models import (
    DomainError,
    PowertrainParams,
    Topology,
    battery_chemical_power,
    quad_map_eval,
    quad_map_invert,
)
from .schedule import (
    CoefficientSchedule,
    FlightProfile,
    Tables,
    build_schedule,
    load_fan_map,
    load_flight_profile,
    load_loss_table,
    mission_profile,
    profile_from_arrays,
)

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    VARIABLE_MASS = "AdmmVariableMass"
    CONSTANT_MASS = "AdmmConstantMass"
    CDCS = "Cdcs"
    GAS_TURBINE_ONLY = "GasTurbineOnly"

    @classmethod
    def parse(cls, value: "Strategy | str") -> "Strategy":
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").lower()
        for s in cls:
            if s.value.lower() == key or s.name.replace("_", "").lower() == key:
                return s
        raise ValueError(f"unknown strategy {value!r}; expected one of {[s.value for s in cls]}")


class MissionError(RuntimeError):
    """Solver failure inside the closed loop, tagged with the step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class InvariantError(RuntimeError):
    pass


class DemandError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Everything needed to fly one mission.

    Paths left as ``None`` select the built-in profile and tables.
    """

    params: PowertrainParams = field(default_factory=PowertrainParams)
    strategy: Strategy = Strategy.VARIABLE_MASS
    delta: float = 60.0
    m0: Optional[float] = None  # aircraft take-off mass, default params.mtow
    E0: Optional[float] = None  # per-system SOC, default upper SOC limit
    profile_path: Optional[str] = None
    motor_table_path: Optional[str] = None
    generator_table_path: Optional[str] = None
    fuel_table_path: Optional[str] = None
    fan_map_path: Optional[str] = None
    speed_ratio: float = 1.0
    table_extrapolation: str = "error"
    max_altitude: Optional[float] = None  # rescales the profile's altitude peak, m
    max_tas: Optional[float] = None  # rescales the profile's airspeed peak, m/s
    windmilling: Optional[float] = None  # recovery efficiency eta_w, None = off
    gt_power_cap_override: Optional[float] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    profile: Optional[FlightProfile] = None  # takes precedence over profile_path
    tables_override: Optional[Tables] = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.windmilling is not None and not 0.0 < self.windmilling <= 1.0:
            raise ValueError("windmilling recovery efficiency must lie in (0, 1]")
        cap = self.gt_power_cap_override
        if cap is not None:
            lo, hi = self.params.gt_power_range
            if not lo < cap <= hi:
                raise ValueError(f"gas-turbine cap {cap} MW must lie in ({lo}, {hi}]")

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    @property
    def initial_mass(self) -> float:
        return self.params.mtow if self.m0 is None else float(self.m0)

    @property
    def initial_soc(self) -> float:
        return self.params.soc_range[1] if self.E0 is None else float(self.E0)

    @property
    def effective_params(self) -> PowertrainParams:
        """Parameters with the gas-turbine cap applied."""
        if self.gt_power_cap_override is None:
            return self.params
        lo, _ = self.params.gt_power_range
        return self.params.with_(gt_power_range=(lo, float(self.gt_power_cap_override)))

    def flight_profile(self) -> FlightProfile:
        if self.profile is not None:
            prof = self.profile
        elif self.profile_path is None:
            T = self.params.mission_time
            kw = {}
            if self.max_altitude is not None:
                kw["cruise_altitude"] = float(self.max_altitude)
            if self.max_tas is not None:
                kw["cruise_speed"] = float(self.max_tas)
            return mission_profile(self.delta, mission_time=T, descent_end=T, **kw)
        else:
            prof = load_flight_profile(self.profile_path, self.delta)
        if self.max_altitude is None and self.max_tas is None:
            return prof
        h, v = prof.h, prof.v
        if self.max_altitude is not None:
            if h.max() <= 0:
                raise ValueError("cannot rescale a profile that never leaves the ground")
            h = h * (self.max_altitude / h.max())
        if self.max_tas is not None:
            v = v * (self.max_tas / v.max())
        return profile_from_arrays(prof.t, h, v, prof.delta)

    def tables(self) -> Tables:
        if self.tables_override is not None:
            return self.tables_override
        kw = {"speed_ratio": self.speed_ratio, "extrapolate": self.table_extrapolation}
        if self.motor_table_path:
            kw["motor"] = load_loss_table(self.motor_table_path)
        if self.generator_table_path:
            kw["generator"] = load_loss_table(self.generator_table_path)
        if self.fuel_table_path:
            kw["fuel"] = load_loss_table(self.fuel_table_path)
        if self.fan_map_path:
            kw["fan_map"] = load_fan_map(self.fan_map_path)
        return Tables(**kw)


@dataclass
class MissionResult:
    """Closed-loop trajectory.

    ``m`` (aircraft, kg) and ``E`` (per system, MJ) hold K+1 knot values;
    every other per-step array has K entries.
    """

    strategy: Strategy
    topology: Topology
    n_systems: int
    delta: float
    t: np.ndarray
    m: np.ndarray
    E: np.ndarray
    phi: np.ndarray
    p_b: np.ndarray
    p_drv: np.ndarray
    components: Dict[str, np.ndarray]
    stats: List[SolverStats] = field(default_factory=list)
    baselines: Dict[str, float] = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.phi)

    @property
    def fuel(self) -> float:
        """Aircraft fuel burned, kg."""
        return float(self.n_systems * self.delta * np.sum(self.phi))

    @property
    def iterations(self) -> np.ndarray:
        return np.array([s.iterations for s in self.stats], dtype=int)

    @property
    def solve_time(self) -> float:
        return float(sum(s.wall_time for s in self.stats))

    def savings_vs(self, baseline_fuel: float) -> float:
        """Fuel saved relative to a baseline, percent."""
        return 100.0 * (baseline_fuel - self.fuel) / baseline_fuel

    def discharge_centroid(self) -> float:
        """Battery-power weighted mean time of discharge, s."""
        w = np.maximum(self.p_b, 0.0)
        if w.sum() <= 0:
            return float("nan")
        return float(np.sum(self.t * w) / np.sum(w))

    def check(self, soc_bounds, tol: float = 1e-9) -> None:
        """Plant bookkeeping invariants."""
        lo, hi = soc_bounds
        scale = max(1.0, abs(hi))
        if np.any(self.E < lo - tol * scale) or np.any(self.E > hi + tol * scale):
            raise InvariantError("SOC left its bounds")
        burned = self.m[0] - self.m[-1]
        if not math.isclose(burned, self.fuel, rel_tol=1e-9, abs_tol=1e-9):
            raise InvariantError(f"mass change {burned} kg differs from fuel total {self.fuel} kg")


# --------------------------------------------------------------------------
# schedule hooks


def apply_windmilling(schedule: CoefficientSchedule, eta_w: float, params: PowertrainParams) -> CoefficientSchedule:
    """Pin the battery power on negative-drive steps to the recovered power.

    Uses the schedule's drive-power estimate.  The recovered shaft power
    ``eta_w P_drv`` passes through the motor map and the bus in reverse.
    """
    if not 0.0 < eta_w <= 1.0:
        raise ValueError("eta_w must lie in (0, 1]")
    neg = schedule.p_drv_estimate < 0
    if not np.any(neg):
        return schedule
    kap = schedule.kappa
    x = eta_w * schedule.p_drv_estimate[neg]
    h = (kap[neg, 0] * x + kap[neg, 1]) * x + kap[neg, 2]
    pinned = np.asarray(battery_chemical_power(h, params), dtype=float)
    pb_lo = np.array(schedule.pb_lo)
    pb_hi = np.array(schedule.pb_hi)
    pb_lo[neg] = pinned
    pb_hi[neg] = pinned
    return schedule.with_bounds(pb_lo=pb_lo, pb_hi=pb_hi)


def _schedule_at(scenario: Scenario, profile: FlightProfile, tables: Tables, mass: float) -> CoefficientSchedule:
    params = scenario.effective_params
    sched = build_schedule(profile, tables, params, mass)
    if scenario.windmilling is not None:
        sched = apply_windmilling(sched, scenario.windmilling, params)
    return sched


# --------------------------------------------------------------------------
# power decomposition


def decompose_powers(p_b: float, p_drv: float, schedule: CoefficientSchedule, i: int, topology=None) -> Dict[str, float]:
    """Component powers (MW per system) for one applied step."""
    topology = Topology.parse(topology or schedule.topology)
    rho = schedule.bus_loss
    p_c = float(p_b - rho * p_b * p_b)
    h = schedule.kappa_map(i)
    if topology is Topology.PARALLEL:
        p_em = float(quad_map_invert(h, p_c))
        if h.c2 > 0 and p_em < h.vertex - 1e-9 * max(1.0, abs(h.vertex)):
            raise DomainError(f"motor power {p_em:.6g} MW below the branch start at step {i}")
        return {"p_gt": p_drv - p_em, "p_em": p_em}
    p_el = float(quad_map_eval(h, p_drv, check=False))
    p_gen = p_el - p_c
    p_gt = float(quad_map_eval(schedule.nu_map(i), p_gen, check=False))
    return {"p_gt": p_gt, "p_el": p_el, "p_c": p_c, "p_gen": p_gen}


COMPONENTS = {
    Topology.PARALLEL: ("p_gt", "p_em"),
    Topology.SERIES: ("p_gt", "p_el", "p_c", "p_gen"),
}


# --------------------------------------------------------------------------
# closed loop


def _drive_power(sched: CoefficientSchedule, mass: float) -> float:
    ms = mass / sched.n_systems
    e2, e1, e0 = sched.eta[0]
    return float((e2 * ms + e1) * ms + e0)


def _admissible_move(p: float, E: float, sched: CoefficientSchedule, soc_bounds, delta: float) -> float:
    """First-move battery power saturated to its box and to the SOC limits."""
    lo_e, hi_e = soc_bounds
    p = min(max(p, sched.pb_lo[0]), sched.pb_hi[0])
    return min(max(p, (E - hi_e) / delta), (E - lo_e) / delta)


def _plant_fuel(sched: CoefficientSchedule, problem: ConvexProblem, mass: float, p: float, k: int) -> float:
    try:
        f = f_phi(0, mass / sched.n_systems, p, problem)
    except DomainError as exc:
        raise MissionError(k, str(exc)) from exc
    return max(f, float(sched.phi_lo[0]))


def _relieve_turbine(sched, problem, mass, p, E, soc_bounds, delta, k) -> float:
    """Smallest battery power above ``p`` that keeps the gas turbine within
    its limit; the solver's constraint tolerance can leave it marginally over."""
    lo_e, _ = soc_bounds
    hi = min(float(sched.pb_hi[0]), (E - lo_e) / delta)
    cap = float(sched.phi_hi[0])

    def over(x):
        return _plant_fuel(sched, problem, mass, x, k) > cap

    if hi <= p or over(hi):
        raise DemandError(f"step {k}: drive power exceeds the combined capability")
    lo = p
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        lo, hi = (mid, hi) if over(mid) else (lo, mid)
    return hi


def _hold_turbine_floor(sched, problem, mass, p, E, soc_bounds, delta, k) -> float:
    """Largest battery power below ``p`` that leaves the gas turbine at or
    above its lower limit.  A plan that dumps spare charge near the end of
    the mission can otherwise ask the turbine to absorb power."""
    _, hi_e = soc_bounds
    lo = max(float(sched.pb_lo[0]), (E - hi_e) / delta)
    floor = float(sched.phi_lo[0])

    def under(x):
        try:
            f = f_phi(0, mass / sched.n_systems, x, problem)
        except DomainError:
            return True
        return f < floor

    if lo >= p or not under(p) or under(lo):
        return p
    hi = p
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        lo, hi = (lo, mid) if under(mid) else (mid, hi)
    return lo


def _cdcs_move(sched: CoefficientSchedule, params: PowertrainParams, p_drv: float, E: float, delta: float) -> float:
    """Maximum electric assist: the battery covers demand up to the motor
    limit, then the SOC floor takes over with a partial final step."""
    if sched.pb_lo[0] == sched.pb_hi[0]:
        return float(sched.pb_lo[0])
    _, em_hi = params.em_power_range
    p_c = quad_map_eval(sched.kappa_map(0), min(max(p_drv, 0.0), em_hi), check=False)
    p_c = min(max(p_c, 0.0), params.max_effective_power)
    p = float(battery_chemical_power(p_c, params))
    p = min(max(p, sched.pb_lo[0]), sched.pb_hi[0])
    lo_e, _ = params.soc_range
    return max(0.0, min(p, (E - lo_e) / delta))


def _solve_step(problem: ConvexProblem, opts: SolverOptions, k: int):
    """Solve one horizon; a stalled solve is retried with ungated penalty
    adaptation, which breaks the multiplier drift seen on very short
    horizons when several bounds are active at once."""
    sol = admm.solve(problem, opts)
    if sol.converged or opts.gate == 0.0:
        return sol
    retry = admm.solve(problem, opts.with_(gate=0.0))
    retry.stats.iterations += sol.stats.iterations
    retry.stats.wall_time += sol.stats.wall_time
    if not retry.converged:
        log.warning("step %d: solver stopped with status %s", k, retry.stats.status)
    return retry


def run_closed_loop(scenario: Scenario, *, trace_steps: str = "all", progress=None,
                    on_solve=None) -> MissionResult:
    """Fly the mission with the scenario's strategy.

    ``trace_steps`` selects which solves keep their per-iteration trace:
    ``"all"``, ``"first"`` (the full-horizon solve) or ``"none"``.
    ``on_solve(k, problem, solution)`` is called after every horizon solve.
    """
    if trace_steps not in ("all", "first", "none"):
        raise ValueError("trace_steps must be 'all', 'first' or 'none'")
    params = scenario.effective_params
    profile = scenario.flight_profile()
    tables = scenario.tables()
    strategy = scenario.strategy
    K = profile.n_steps
    if K < 1:
        raise ValueError("profile has no steps")
    delta = profile.delta
    n = params.n_systems
    soc = params.soc_range
    lo_e, hi_e = soc
    m = np.empty(K + 1)
    E = np.empty(K + 1)
    m[0], E[0] = scenario.initial_mass, scenario.initial_soc
    phi = np.empty(K)
    p_b = np.empty(K)
    p_drv = np.empty(K)
    topology = Topology.parse(params.topology)
    comps = {c: np.empty(K) for c in COMPONENTS[topology]}
    stats: List[SolverStats] = []

    for k in range(K):
        sched = _schedule_at(scenario, profile.tail(k), tables, m[k])
        problem = assemble(sched, m[k], E[k], params, constant_mass=strategy is Strategy.CONSTANT_MASS)
        if strategy in (Strategy.VARIABLE_MASS, Strategy.CONSTANT_MASS):
            keep = trace_steps == "all" or (trace_steps == "first" and k == 0)
            sol = _solve_step(problem, scenario.solver.with_(trace=keep), k)
            if not np.all(np.isfinite(sol.p_b)):
                raise MissionError(k, "solver returned non-finite battery power")
            if on_solve is not None:
                on_solve(k, problem, sol)
            move = float(sol.p_b[0])
            stats.append(sol.stats)
        else:
            drive = _drive_power(sched, m[k])
            if strategy is Strategy.CDCS:
                move = _cdcs_move(sched, params, drive, E[k], delta)
            else:
                move = min(max(0.0, sched.pb_lo[0]), sched.pb_hi[0])
            stats.append(SolverStats(status="heuristic", backend="rule"))
        move = _admissible_move(move, E[k], sched, soc, delta)
        # the plant shares the predictor's models but always sees the true mass
        plant = assemble(sched.slice(slice(0, 1)), m[k], E[k], params)
        if sched.pb_lo[0] < sched.pb_hi[0]:
            move = _hold_turbine_floor(sched, plant, m[k], move, E[k], soc, delta, k)
        fuel = _plant_fuel(sched, plant, m[k], move, k)
        if fuel > sched.phi_hi[0]:
            move = _relieve_turbine(sched, plant, m[k], move, E[k], soc, delta, k)
            fuel = _plant_fuel(sched, plant, m[k], move, k)
        p_drv[k] = _drive_power(sched, m[k])
        phi[k] = fuel
        p_b[k] = move
        m[k + 1] = m[k] - n * fuel * delta
        E[k + 1] = E[k] - move * delta
        if E[k + 1] < lo_e - 1e-9 * hi_e or E[k + 1] > hi_e + 1e-9 * hi_e:
            raise InvariantError(f"step {k}: SOC {E[k + 1]:.9g} MJ outside [{lo_e}, {hi_e}]")
        parts = decompose_powers(move, p_drv[k], sched, 0, topology)
        for c in comps:
            comps[c][k] = parts[c]
        if progress is not None:
            progress(k, K)

    result = MissionResult(
        strategy=strategy, topology=topology, n_systems=n, delta=delta, t=profile.t[:K].copy(),
        m=m, E=E, phi=phi, p_b=p_b, p_drv=p_drv, components=comps, stats=stats,
    )
    result.check(soc)
    return result


def cdcs_strategy(scenario: Scenario) -> MissionResult:
    """Charge-depleting then charge-sustaining baseline."""
    return run_closed_loop(scenario.with_(strategy=Strategy.CDCS))


def compare_strategies(scenario: Scenario, strategies) -> List[MissionResult]:
    """Fly each strategy; savings are recorded against the first one."""
    results = [run_closed_loop(scenario.with_(strategy=Strategy.parse(s))) for s in strategies]
    if results:
        base = results[0]
        for r in results:
            r.baselines[base.strategy.value] = base.fuel
    return results


# --------------------------------------------------------------------------
# serialisation

MISSION_COLUMNS = ("step", "t", "m", "E", "phi", "p_b", "p_drv")
STAT_COLUMNS = ("iterations", "status")


def mission_columns(topology) -> tuple:
    return MISSION_COLUMNS + COMPONENTS[Topology.parse(topology)] + ("m_end", "E_end") + STAT_COLUMNS


def write_mission_csv(path, result: MissionResult) -> None:
    """One row per applied step; ``m``/``E`` are the values at the start of
    the step and ``m_end``/``E_end`` the values after it."""
    cols = mission_columns(result.topology)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for k in range(result.n_steps):
            st = result.stats[k] if k < len(result.stats) else SolverStats()
            row = [k, repr(float(result.t[k])), repr(float(result.m[k])), repr(float(result.E[k])),
                   repr(float(result.phi[k])), repr(float(result.p_b[k])), repr(float(result.p_drv[k]))]
            row += [repr(float(result.components[c][k])) for c in COMPONENTS[result.topology]]
            row += [repr(float(result.m[k + 1])), repr(float(result.E[k + 1]))]
            row += [st.iterations, st.status]
            w.writerow(row)


def write_timing_csv(path, result: MissionResult) -> None:
    """Per-step solve wall times, kept apart so the mission CSV is reproducible."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "backend", "wall_time_s"])
        for k, st in enumerate(result.stats):
            w.writerow([k, st.backend, f"{st.wall_time:.6f}"])


def read_mission_csv(path) -> Dict[str, np.ndarray]:
    """Columns of a mission CSV as arrays (``status`` stays a string array)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    out = {}
    for col in rows[0]:
        vals = [r[col] for r in rows]
        if col == "status":
            out[col] = np.array(vals)
        elif col in ("step", "iterations"):
            out[col] = np.array([int(v) for v in vals])
        else:
            out[col] = np.array([float(v) for v in vals])
    return out


def summary_text(results: List[MissionResult], baseline: Optional[MissionResult] = None) -> str:
    """Fuel totals with savings against ``baseline`` (default: first result)."""
    if not results:
        return ""
    base = baseline or results[0]
    lines = [f"topology: {base.topology.value}", f"baseline: {base.strategy.value}",
             f"{'strategy':<18} {'fuel_kg':>10} {'savings_%':>10} {'final_soc_MJ':>13} {'iterations':>11} {'solve_s':>9}"]
    for r in results:
        lines.append(
            f"{r.strategy.value:<18} {r.fuel:>10.3f} {r.savings_vs(base.fuel):>10.3f} "
            f"{r.E[-1]:>13.3f} {int(r.iterations.sum()):>11d} {r.solve_time:>9.3f}"
        )
    return "\n".join(lines) + "\n"
