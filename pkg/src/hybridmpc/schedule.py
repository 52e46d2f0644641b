"""Flight profile ingestion and the per-step coefficient schedule.

The schedule fixes, for every step of the prediction horizon, the convex
loss/fuel maps (interpolated at the estimated shaft speed), the drive-power
quadratic in mass, and the effective bounds on fuel rate and battery power.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .models import (
    EtaCoeffs,
    PowertrainParams,
    QuadMap,
    Topology,
    battery_chemical_power,
    drive_power,
    drive_power_coefficients,
)

log = logging.getLogger(__name__)

CP_AIR = 1005.0  # J/(kg K)
# omega = (156.7/100)(pi/30) Omega sqrt(T_in)
_SPEED_SCALE = 156.7 / 100.0 * math.pi / 30.0


class ProfileError(ValueError):
    pass


class CoverageError(ValueError):
    """Shaft speed outside the sampled range of a loss table."""


class InfeasibleBoundsError(ValueError):
    pass


# --------------------------------------------------------------------------
# flight profile


@dataclass(frozen=True)
class FlightProfile:
    """Prescribed trajectory sampled on a uniform grid.

    Arrays hold N+1 knots; step ``i`` spans ``[t[i], t[i+1]]`` and uses the
    knot ``i+1`` only for the forward differences of speed and path angle.
    """

    delta: float
    t: np.ndarray
    h: np.ndarray
    v: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in (self.t, self.h, self.v, self.gamma)]
        n = len(arrays[0])
        if any(len(a) != n for a in arrays):
            raise ProfileError("profile columns differ in length")
        for name, a in zip(("t", "h", "v", "gamma"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.delta <= 0:
            raise ProfileError("delta must be positive")
        if n > 1 and not np.allclose(np.diff(self.t), self.delta, rtol=1e-9, atol=1e-9):
            raise ProfileError("knots are not uniformly spaced by delta")
        if np.any(self.v <= 0):
            raise ProfileError("true airspeed must be positive")
        if np.any(np.abs(self.gamma) >= math.pi / 2):
            raise ProfileError("flight-path angle must satisfy |gamma| < pi/2")

    @property
    def n_steps(self) -> int:
        return max(len(self.t) - 1, 0)

    @property
    def steps(self):
        return [
            (float(self.t[i]), float(self.h[i]), float(self.v[i]), float(self.gamma[i]))
            for i in range(self.n_steps)
        ]

    def tail(self, k: int) -> "FlightProfile":
        """Profile from knot ``k`` onward (the remaining flight at MPC step k)."""
        return FlightProfile(self.delta, self.t[k:], self.h[k:], self.v[k:], self.gamma[k:])

    def head(self, n_steps: int) -> "FlightProfile":
        s = slice(0, n_steps + 1)
        return FlightProfile(self.delta, self.t[s], self.h[s], self.v[s], self.gamma[s])


def path_angles(h, v, delta) -> np.ndarray:
    """gamma_i = asin((h_{i+1} - h_i) / (v_i delta)); the last value is repeated."""
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    if len(h) < 2:
        return np.zeros_like(h)
    ratio = np.diff(h) / (v[:-1] * delta)
    if np.any(np.abs(ratio) > 1):
        i = int(np.argmax(np.abs(ratio)))
        raise ProfileError(f"infeasible climb rate at knot {i}: dh/(v delta) = {ratio[i]:.3g}")
    gam = np.arcsin(ratio)
    return np.append(gam, gam[-1])


def profile_from_arrays(t, h, v, delta: float, gamma=None) -> FlightProfile:
    """Resample raw samples onto the uniform grid ``t0 + k delta``."""
    t = np.asarray(t, dtype=float)
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    if len(t) == 0:
        empty = np.zeros(0)
        return FlightProfile(delta, empty, empty, empty, empty)
    if np.any(np.diff(t) <= 0):
        raise ProfileError("time column must be strictly increasing")
    n = int(math.ceil((t[-1] - t[0]) / delta - 1e-9))
    grid = t[0] + delta * np.arange(n + 1)
    hg = np.interp(grid, t, h)
    vg = np.interp(grid, t, v)
    if gamma is None:
        gg = path_angles(hg, vg, delta)
    else:
        gg = np.interp(grid, t, np.asarray(gamma, dtype=float))
    return FlightProfile(delta, grid, hg, vg, gg)


def load_flight_profile(path, delta: float) -> FlightProfile:
    """Read a ``t,h,v[,gamma]`` CSV (SI units) and resample it to ``delta``."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise ProfileError(f"cannot read profile {path}: {exc}") from exc
    if not rows:
        raise ProfileError(f"{path}: empty profile")
    header = [c.strip().lower() for c in rows[0]]
    for col in ("t", "h", "v"):
        if col not in header:
            raise ProfileError(f"{path}: missing column {col!r} in header {header}")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise ProfileError(f"{path}: {exc}") from exc
    col = {name: data[:, header.index(name)] for name in header}
    return profile_from_arrays(col["t"], col["h"], col["v"], delta, col.get("gamma"))


def write_flight_profile(path, profile: FlightProfile) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "h", "v", "gamma"])
        for row in zip(profile.t, profile.h, profile.v, profile.gamma):
            w.writerow([repr(float(x)) for x in row])


def mission_profile(
    delta: float = 60.0,
    *,
    cruise_altitude: float = 7500.0,
    cruise_speed: float = 190.0,
    ground_speed: float = 150.0,
    climb_end: float = 600.0,
    descent_start: float = 2700.0,
    descent_end: float = 3600.0,
    mission_time: float = 3600.0,
) -> FlightProfile:
    """Trapezoidal climb/cruise/descent mission built from four or five knots.

    Setting ``descent_end`` before ``mission_time`` adds a level segment at
    ground altitude after the descent, which makes a steep descent possible.
    """
    t = [0.0, climb_end, descent_start, descent_end]
    h = [0.0, cruise_altitude, cruise_altitude, 0.0]
    v = [ground_speed, cruise_speed, cruise_speed, ground_speed]
    if descent_end < mission_time:
        t.append(mission_time)
        h.append(0.0)
        v.append(ground_speed)
    return profile_from_arrays(t, h, v, delta)


def windmill_profile(delta: float = 60.0, climb_end: float = 420.0) -> FlightProfile:
    """Mission with a steep climb and a steep 300 s final descent.

    The climb needs more than 3 MW of drive power per system and the descent
    drives the fan power negative, so both gas-turbine saturation and energy
    recovery show up in one flight.
    """
    return mission_profile(delta, climb_end=climb_end, descent_start=3000.0, descent_end=3300.0)


# --------------------------------------------------------------------------
# fan map and loss tables


def standard_temperature(h):
    """ISA temperature in K: 6.5 K/km lapse to 11 km, isothermal above."""
    h = np.asarray(h, dtype=float)
    out = np.where(h <= 11000.0, 288.15 - 0.0065 * h, 216.65)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FanMapTable:
    """Non-dimensional fan speed on a rectangular (altitude, drive power) grid."""

    altitude: np.ndarray  # m, increasing
    drive_power: np.ndarray  # MW per system, increasing
    omega_nd: np.ndarray  # shape (len(altitude), len(drive_power))
    mach: float = 0.55

    def __post_init__(self):
        alt = np.asarray(self.altitude, dtype=float)
        pw = np.asarray(self.drive_power, dtype=float)
        om = np.asarray(self.omega_nd, dtype=float)
        if om.shape != (len(alt), len(pw)):
            raise ValueError(f"fan map grid shape {om.shape} != ({len(alt)}, {len(pw)})")
        if np.any(np.diff(alt) <= 0) or np.any(np.diff(pw) <= 0):
            raise ValueError("fan map axes must be strictly increasing")
        if np.any(om <= 0):
            raise ValueError("fan map speeds must be positive")
        object.__setattr__(self, "altitude", alt)
        object.__setattr__(self, "drive_power", pw)
        object.__setattr__(self, "omega_nd", om)

    def lookup(self, h, p_drv):
        """Bilinear interpolation; queries outside the grid are clamped."""
        h = np.atleast_1d(np.asarray(h, dtype=float))
        p = np.atleast_1d(np.asarray(p_drv, dtype=float))
        h, p = np.broadcast_arrays(h, p)
        hc = np.clip(h, self.altitude[0], self.altitude[-1])
        pc = np.clip(p, self.drive_power[0], self.drive_power[-1])
        n_out = int(np.count_nonzero((hc != h) | (pc != p)))
        if n_out:
            log.warning("fan map queried outside its grid at %d point(s); clamped", n_out)
        out = np.empty(h.shape)
        for idx in np.ndindex(h.shape):
            out[idx] = _bilinear(self.altitude, self.drive_power, self.omega_nd, hc[idx], pc[idx])
        return out

    @classmethod
    def synthetic(cls, mach: float = 0.55) -> "FanMapTable":
        """Default map: speed affine in log drive power, falling slowly with altitude."""
        alt = np.linspace(0.0, 12000.0, 13)
        pw = np.geomspace(0.05, 8.0, 25)
        om = 85.0 + 10.0 * np.log(pw[None, :] / 2.0) - 0.5e-3 * alt[:, None]
        return cls(alt, pw, om, mach)


def _bilinear(xs, ys, z, x, y):
    i = min(max(int(np.searchsorted(xs, x, side="right")) - 1, 0), max(len(xs) - 2, 0))
    j = min(max(int(np.searchsorted(ys, y, side="right")) - 1, 0), max(len(ys) - 2, 0))
    if len(xs) == 1 and len(ys) == 1:
        return float(z[0, 0])
    if len(xs) == 1:
        ty = (y - ys[j]) / (ys[j + 1] - ys[j])
        return float((1 - ty) * z[0, j] + ty * z[0, j + 1])
    if len(ys) == 1:
        tx = (x - xs[i]) / (xs[i + 1] - xs[i])
        return float((1 - tx) * z[i, 0] + tx * z[i + 1, 0])
    tx = (x - xs[i]) / (xs[i + 1] - xs[i])
    ty = (y - ys[j]) / (ys[j + 1] - ys[j])
    return float(
        (1 - tx) * (1 - ty) * z[i, j]
        + tx * (1 - ty) * z[i + 1, j]
        + (1 - tx) * ty * z[i, j + 1]
        + tx * ty * z[i + 1, j + 1]
    )


def load_fan_map(path) -> FanMapTable:
    """Matrix CSV: header ``altitude_m\\drive_power_MW,p1,p2,...``; one row per
    altitude ``h,Omega(h,p1),...``; optional ``# mach: <value>`` comment."""
    path = Path(path)
    mach = 0.55
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for r in csv.reader(fh):
            if not r:
                continue
            if r[0].lstrip().startswith("#"):
                text = ",".join(r).lstrip("# ").strip()
                if text.lower().startswith("mach"):
                    mach = float(text.split(":", 1)[1])
                continue
            rows.append(r)
    if len(rows) < 2:
        raise ValueError(f"{path}: fan map needs a header row and at least one altitude row")
    powers = [float(c) for c in rows[0][1:]]
    alt, om = [], []
    for r in rows[1:]:
        alt.append(float(r[0]))
        om.append([float(c) for c in r[1:]])
    return FanMapTable(np.array(alt), np.array(powers), np.array(om), mach)


def write_fan_map(path, fan: FanMapTable) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# mach: {fan.mach}\n")
        w = csv.writer(fh)
        w.writerow(["altitude_m\\drive_power_MW"] + [repr(float(p)) for p in fan.drive_power])
        for h, row in zip(fan.altitude, fan.omega_nd):
            w.writerow([repr(float(h))] + [repr(float(x)) for x in row])


def shaft_speed(p_drv, h, v, fan_map: FanMapTable):
    """Fan shaft speed in rad/s from drive power (MW per system), altitude and TAS."""
    omega_nd = fan_map.lookup(h, p_drv)
    t_in = standard_temperature(h) + np.asarray(v, dtype=float) ** 2 / (2 * CP_AIR)
    out = _SPEED_SCALE * omega_nd * np.sqrt(t_in)
    return float(out[0]) if out.size == 1 and np.ndim(p_drv) == 0 and np.ndim(h) == 0 else out


@dataclass(frozen=True)
class LossTable:
    """Quadratic-map coefficients sampled over shaft speed."""

    omega: np.ndarray  # rad/s, increasing
    coeffs: np.ndarray  # shape (len(omega), 3): c2, c1, c0

    def __post_init__(self):
        om = np.atleast_1d(np.asarray(self.omega, dtype=float))
        c = np.asarray(self.coeffs, dtype=float).reshape(len(om), 3)
        if np.any(np.diff(om) <= 0):
            raise ValueError("loss table speeds must be strictly increasing")
        for row in c:
            QuadMap(*row)  # validates c2 >= 0, c1 > 0
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, c2: float, c1: float, c0: float = 0.0) -> "LossTable":
        return cls(np.array([0.0]), np.array([[c2, c1, c0]]))

    def at(self, omega, extrapolate: str = "error") -> np.ndarray:
        """Piecewise-linear interpolation of each coefficient; shape (len(omega), 3)."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        if len(self.omega) == 1:
            return np.repeat(self.coeffs, len(omega), axis=0)
        lo, hi = self.omega[0], self.omega[-1]
        tol = 1e-9 * max(1.0, abs(hi))
        outside = (omega < lo - tol) | (omega > hi + tol)
        if np.any(outside):
            if extrapolate == "error":
                bad = omega[outside]
                raise CoverageError(
                    f"shaft speed {bad.min():.4g}..{bad.max():.4g} rad/s outside table range [{lo:.4g}, {hi:.4g}]"
                )
            log.warning("loss table clamped at %d speed(s)", int(np.count_nonzero(outside)))
        return np.column_stack([np.interp(omega, self.omega, self.coeffs[:, k]) for k in range(3)])


def load_loss_table(path) -> LossTable:
    """CSV with header ``omega_rad_s,c2,c1,c0``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    header = [c.strip().lower() for c in rows[0]]
    expected = ["omega_rad_s", "c2", "c1", "c0"]
    if header != expected:
        raise ValueError(f"{path}: header {header} != {expected}")
    data = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float).reshape(-1, 4)
    return LossTable(data[:, 0], data[:, 1:])


def write_loss_table(path, table: LossTable) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["omega_rad_s", "c2", "c1", "c0"])
        for om, c in zip(table.omega, table.coeffs):
            w.writerow([repr(float(om))] + [repr(float(x)) for x in c])


def default_motor_table(efficiency: float = 0.95, at_power: float = 2.0) -> LossTable:
    """Speed-independent motor map with ``kappa1 = 1``, ``kappa0 = 0`` and the
    quadratic term set so that ``P_em / h(P_em) = efficiency`` at ``at_power``."""
    c2 = (at_power / efficiency - at_power) / at_power**2
    return LossTable.constant(c2, 1.0, 0.0)


@dataclass(frozen=True)
class Tables:
    """Everything the schedule interpolates from."""

    motor: LossTable = field(default_factory=default_motor_table)
    generator: LossTable = field(default_factory=default_motor_table)
    fuel: Optional[LossTable] = None  # None: constant map from PowertrainParams.fuel_map
    fan_map: FanMapTable = field(default_factory=FanMapTable.synthetic)
    speed_ratio: float = 1.0  # series: omega_gt = omega_gen = k omega_drv
    extrapolate: str = "error"

    def fuel_table(self, params: PowertrainParams) -> LossTable:
        return self.fuel if self.fuel is not None else LossTable.constant(*params.fuel_map)


def data_path(name: str) -> Path:
    return Path(str(resources.files("hybridmpc") / "data" / name))


# --------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class CoefficientSchedule:
    """Per-step maps, drive-power coefficients and effective bounds.

    ``kappa``/``nu``/``beta`` hold (c2, c1, c0) rows.  ``eta`` is per
    system: drive power of one system as a function of one system's share of
    the aircraft mass.
    """

    t: np.ndarray
    kappa: np.ndarray
    nu: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    omega_drv: np.ndarray
    p_drv_estimate: np.ndarray
    phi_lo: np.ndarray
    phi_hi: np.ndarray
    pb_lo: np.ndarray
    pb_hi: np.ndarray
    topology: Topology
    n_systems: int
    bus_loss: float  # R/U^2, 1/MW
    delta: float

    def __post_init__(self):
        for name in ("t", "kappa", "nu", "beta", "eta", "omega_drv", "p_drv_estimate",
                     "phi_lo", "phi_hi", "pb_lo", "pb_hi"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.t)

    def kappa_map(self, i: int) -> QuadMap:
        return QuadMap(*self.kappa[i])

    def nu_map(self, i: int) -> QuadMap:
        return QuadMap(*self.nu[i])

    def beta_map(self, i: int) -> QuadMap:
        return QuadMap(*self.beta[i])

    def eta_coeffs(self, i: int) -> EtaCoeffs:
        return EtaCoeffs(*self.eta[i])

    def tail(self, k: int) -> "CoefficientSchedule":
        return self.slice(slice(k, None))

    def slice(self, sl) -> "CoefficientSchedule":
        arrays = {
            name: getattr(self, name)[sl]
            for name in ("t", "kappa", "nu", "beta", "eta", "omega_drv", "p_drv_estimate",
                         "phi_lo", "phi_hi", "pb_lo", "pb_hi")
        }
        return replace(self, **arrays)

    def with_bounds(self, phi_lo=None, phi_hi=None, pb_lo=None, pb_hi=None) -> "CoefficientSchedule":
        changes = {k: v for k, v in dict(phi_lo=phi_lo, phi_hi=phi_hi, pb_lo=pb_lo, pb_hi=pb_hi).items()
                   if v is not None}
        return replace(self, **changes)


def eta_schedule(profile: FlightProfile, params: PowertrainParams) -> np.ndarray:
    """Whole-aircraft drive-power coefficients per step, shape (N, 3)."""
    out = np.empty((profile.n_steps, 3))
    for i in range(profile.n_steps):
        e = drive_power_coefficients(
            profile.v[i], profile.v[i + 1], profile.gamma[i], profile.gamma[i + 1], profile.delta, params
        )
        out[i] = (e.eta2, e.eta1, e.eta0)
    return out


def estimate_drive_power_profile(profile: FlightProfile, m0: float, params: PowertrainParams) -> np.ndarray:
    """Per-system drive power with the mass frozen at ``m0`` (whole aircraft, kg)."""
    eta = eta_schedule(profile, params)
    if len(eta) == 0:
        return np.zeros(0)
    return drive_power(EtaCoeffs(eta[:, 0], eta[:, 1], eta[:, 2]), m0, params.n_systems)


def _vertex(c2, c1):
    with np.errstate(divide="ignore"):
        return np.where(c2 > 0, -c1 / (2 * np.where(c2 > 0, c2, 1.0)), -np.inf)


def _qeval(c, x):
    return (c[:, 0] * x + c[:, 1]) * x + c[:, 2]


def _qinv(c, y):
    d = y - c[:, 2]
    rad = c[:, 1] ** 2 + 4 * c[:, 0] * d
    if np.any(rad < -1e-12 * c[:, 1] ** 2):
        raise InfeasibleBoundsError("bound lies below a loss map minimum")
    return 2 * d / (c[:, 1] + np.sqrt(np.maximum(rad, 0.0)))


def compute_bounds(schedule: CoefficientSchedule, params: PowertrainParams, topology=None):
    """Effective per-step bounds ``(phi_lo, phi_hi, pb_lo, pb_hi)``.

    Vertex terms of affine maps are -inf and drop out of every max/min.
    """
    topology = Topology.parse(topology or schedule.topology)
    kap, nu, beta = schedule.kappa, schedule.nu, schedule.beta
    gt_lo, gt_hi = params.gt_power_range
    em_lo, em_hi = params.em_power_range
    pc_max = params.max_effective_power  # U^2/4R
    n = len(schedule)
    v_f = _vertex(beta[:, 0], beta[:, 1])
    v_h = _vertex(kap[:, 0], kap[:, 1])
    phi_hi = _qeval(beta, np.full(n, gt_hi))

    if topology is Topology.PARALLEL:
        gt_lo_i = np.maximum(gt_lo, v_f)
        phi_lo = _qeval(beta, gt_lo_i)
        em_lo_i = np.maximum(em_lo, v_h)
        r_max = _qinv(kap, np.full(n, pc_max))
        em_hi_i = np.minimum(em_hi, r_max)
        pb_lo = battery_chemical_power(np.minimum(_qeval(kap, em_lo_i), pc_max), params)
        pb_hi = battery_chemical_power(np.minimum(_qeval(kap, em_hi_i), pc_max), params)
    else:
        v_gen = _vertex(nu[:, 0], nu[:, 1])
        finite = np.isfinite(v_gen)
        gen_floor = np.where(finite, _qeval(nu, np.where(finite, v_gen, 0.0)), -np.inf)
        gt_lo_i = np.maximum.reduce([np.full(n, gt_lo), v_f, gen_floor])
        phi_lo = _qeval(beta, gt_lo_i)
        h_em_lo = _qeval(kap, np.maximum(em_lo, v_h))
        h_em_hi = _qeval(kap, np.full(n, em_hi))
        pb_lo = battery_chemical_power(np.minimum(h_em_lo - _qinv(nu, np.full(n, gt_hi)), pc_max), params)
        pb_hi = battery_chemical_power(np.minimum(h_em_hi - _qinv(nu, gt_lo_i), pc_max), params)

    phi_lo = np.asarray(phi_lo, dtype=float)
    pb_lo = np.asarray(pb_lo, dtype=float)
    pb_hi = np.asarray(pb_hi, dtype=float)
    bad_phi = np.nonzero(phi_lo > phi_hi)[0]
    bad_pb = np.nonzero(pb_lo > pb_hi)[0]
    if len(bad_phi) or len(bad_pb):
        i = int(bad_phi[0] if len(bad_phi) else bad_pb[0])
        raise InfeasibleBoundsError(f"empty bound interval at step {i}")
    return phi_lo, phi_hi, pb_lo, pb_hi


def build_schedule(
    profile: FlightProfile,
    tables: Tables,
    params: PowertrainParams,
    m0: float,
    topology=None,
) -> CoefficientSchedule:
    """Coefficient schedule over every step of ``profile``.

    ``m0`` is the whole-aircraft mass used for the constant-mass drive-power
    estimate that selects the shaft speeds.
    """
    topology = Topology.parse(topology or params.topology)
    n = profile.n_steps
    eta_total = eta_schedule(profile, params) if n else np.zeros((0, 3))
    p_est = (
        drive_power(EtaCoeffs(eta_total[:, 0], eta_total[:, 1], eta_total[:, 2]), m0, params.n_systems)
        if n else np.zeros(0)
    )
    if n:
        omega = np.atleast_1d(shaft_speed(p_est, profile.h[:n], profile.v[:n], tables.fan_map))
    else:
        omega = np.zeros(0)
    kappa = tables.motor.at(omega, tables.extrapolate) if n else np.zeros((0, 3))
    if topology is Topology.PARALLEL:
        gt_speed = omega
    else:
        gt_speed = tables.speed_ratio * omega
        _, em_hi = params.em_power_range
        over = p_est > em_hi
        if np.any(over):
            log.warning("drive power estimate exceeds motor limit at %d step(s)", int(np.count_nonzero(over)))
    nu = tables.generator.at(gt_speed, tables.extrapolate) if n else np.zeros((0, 3))
    beta = tables.fuel_table(params).at(gt_speed, tables.extrapolate) if n else np.zeros((0, 3))
    ns = float(params.n_systems)
    eta = np.column_stack([eta_total[:, 0] * ns, eta_total[:, 1], eta_total[:, 2] / ns]) if n else np.zeros((0, 3))
    empty = np.zeros(n)
    sched = CoefficientSchedule(
        t=profile.t[:n], kappa=kappa, nu=nu, beta=beta, eta=eta, omega_drv=omega,
        p_drv_estimate=p_est, phi_lo=empty, phi_hi=empty, pb_lo=empty, pb_hi=empty,
        topology=topology, n_systems=params.n_systems, bus_loss=params.bus_loss_coeff,
        delta=profile.delta,
    )
    if n == 0:
        return sched
    return sched.with_bounds(*compute_bounds(sched, params, topology))
