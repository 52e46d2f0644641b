"""Physical component models for the hybrid-electric powertrain.

Units throughout: power in MW, energy in MJ, mass in kg, time in s.  The
fuel-map slope in kg/MJ therefore composes directly with MW power to give a
fuel rate in kg/s.

Angles: the aerodynamic coefficients are tabulated per degree, so the angle
of attack is handled in degrees.  Flight-path angles enter trigonometric
functions and are always in radians.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

__all__ = [
    "Topology",
    "PowertrainParams",
    "QuadMap",
    "EtaCoeffs",
    "DomainError",
    "battery_chemical_power",
    "battery_effective_power",
    "quad_map_eval",
    "quad_map_invert",
    "drive_power_coefficients",
    "drive_power",
    "recover_alpha",
    "AlphaCheck",
]

# Unit roundoff allowance for square-root radicands.
_RADICAND_TOL = 1e-12


class DomainError(ValueError):
    """A map was evaluated outside the branch on which it is invertible/monotone."""


class Topology(str, enum.Enum):
    PARALLEL = "parallel"
    SERIES = "series"

    @classmethod
    def parse(cls, value: "Topology | str") -> "Topology":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown topology {value!r}; expected 'parallel' or 'series'") from None


@dataclass(frozen=True)
class PowertrainParams:
    """Aircraft and powertrain constants.  Defaults describe a BAe 146-class
    hybrid with four propulsion systems.

    Masses ``mtow``, ``fuel_mass`` and ``battery_mass`` are whole-aircraft
    totals; SOC and component power ranges are per propulsion system.
    """

    mtow: float = 42000.0
    g_accel: float = 9.81
    wing_area: float = 77.3
    air_density: float = 1.225
    b0: float = 0.43
    b1: float = 0.11
    a0: float = 0.029
    a1: float = 0.004
    a2: float = 5.3e-4
    alpha_range: Tuple[float, float] = (-3.9, 10.0)
    n_systems: int = 4
    fuel_mass: float = 4000.0
    battery_mass: float = 8000.0
    battery_energy_density: float = 0.875
    soc_range: Tuple[float, float] = (350.0, 1487.0)
    gt_power_range: Tuple[float, float] = (0.0, 5.0)
    em_power_range: Tuple[float, float] = (0.0, 5.0)
    battery_voltage: float = 1500.0
    battery_resistance: float = 0.035
    mission_time: float = 3600.0
    topology: Topology = Topology.PARALLEL
    # fuel map (beta2, beta1, beta0): kg/s/MW^2, kg/MJ, kg/s
    fuel_map: Tuple[float, float, float] = (0.0, 0.0821, 0.0327)

    def __post_init__(self):
        object.__setattr__(self, "topology", Topology.parse(self.topology))
        for name in ("alpha_range", "soc_range", "gt_power_range", "em_power_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        for name in ("air_density", "wing_area", "battery_voltage", "battery_resistance", "b1", "a2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_systems < 1:
            raise ValueError("n_systems must be at least 1")
        capacity = self.battery_capacity
        lo, hi = self.soc_range
        if lo < 0 or hi > capacity * (1 + 1e-12):
            raise ValueError(f"soc_range {self.soc_range} not within [0, {capacity:g}] MJ per system")
        b2, b1, _ = self.fuel_map
        if b2 < 0 or b1 <= 0:
            raise ValueError("fuel map needs beta2 >= 0 and beta1 > 0")
        object.__setattr__(self, "fuel_map", tuple(float(c) for c in self.fuel_map))

    @property
    def battery_capacity(self) -> float:
        """Stored energy per system when full, MJ."""
        return self.battery_mass / self.n_systems * self.battery_energy_density

    @property
    def bus_loss_coeff(self) -> float:
        """R/U^2 expressed in 1/MW."""
        return self.battery_resistance / self.battery_voltage**2 * 1e6

    @property
    def max_effective_power(self) -> float:
        """U^2/4R in MW: largest effective power the equivalent circuit can deliver."""
        return 0.25 / self.bus_loss_coeff

    @property
    def max_chemical_power(self) -> float:
        """U^2/2R in MW: chemical power at the branch point of the circuit map."""
        return 0.5 / self.bus_loss_coeff

    def with_(self, **changes) -> "PowertrainParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class QuadMap:
    """``y = c2 x**2 + c1 x + c0`` restricted to its nondecreasing branch."""

    c2: float
    c1: float
    c0: float = 0.0

    def __post_init__(self):
        if self.c2 < 0 or self.c1 <= 0:
            raise ValueError(f"QuadMap needs c2 >= 0 and c1 > 0, got ({self.c2}, {self.c1}, {self.c0})")

    @property
    def vertex(self) -> float:
        """Left end of the monotone branch (-inf when the map is affine)."""
        return -self.c1 / (2 * self.c2) if self.c2 > 0 else -math.inf

    @property
    def min_value(self) -> float:
        return self.c0 - self.c1**2 / (4 * self.c2) if self.c2 > 0 else -math.inf

    def __call__(self, x):
        return quad_map_eval(self, x)

    def inverse(self, y):
        return quad_map_invert(self, y)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.c2, self.c1, self.c0)


@dataclass(frozen=True)
class EtaCoeffs:
    """Drive power as a quadratic in aircraft mass: MW/kg^2, MW/kg, MW."""

    eta2: float
    eta1: float
    eta0: float

    def per_system(self, n_systems: int) -> "EtaCoeffs":
        """Coefficients for one system's drive power as a function of one
        system's share of the mass, ``m_s = m / n``.

        ``P(n m_s) / n = n eta2 m_s^2 + eta1 m_s + eta0 / n``
        """
        n = float(n_systems)
        return EtaCoeffs(self.eta2 * n, self.eta1, self.eta0 / n)


def battery_chemical_power(p_c, params: PowertrainParams):
    """Chemical power drawn for effective output ``p_c`` (the map ``g``)."""
    rho = params.bus_loss_coeff
    p_c = np.asarray(p_c, dtype=float)
    rad = 1.0 - 4.0 * rho * p_c
    if np.any(rad < -_RADICAND_TOL):
        raise DomainError(f"effective power exceeds U^2/4R = {params.max_effective_power:.6g} MW")
    s = np.sqrt(np.maximum(rad, 0.0))
    # 2 p / (1 + s) == (1 - s) / (2 rho) without the cancellation near p = 0
    out = 2.0 * p_c / (1.0 + s)
    return out if out.ndim else float(out)


def battery_effective_power(p_b, params: PowertrainParams):
    """Inverse of :func:`battery_chemical_power` on its lower branch."""
    p_b = np.asarray(p_b, dtype=float)
    out = p_b - params.bus_loss_coeff * p_b**2
    return out if out.ndim else float(out)


def quad_map_eval(qmap: QuadMap, x, *, check: bool = True):
    x = np.asarray(x, dtype=float)
    if check and qmap.c2 > 0 and np.any(x < qmap.vertex - 1e-12 * max(1.0, abs(qmap.vertex))):
        raise DomainError(f"argument below monotone branch start {qmap.vertex:.6g}")
    out = (qmap.c2 * x + qmap.c1) * x + qmap.c0
    return out if out.ndim else float(out)


def quad_map_invert(qmap: QuadMap, y):
    y = np.asarray(y, dtype=float)
    d = y - qmap.c0
    rad = qmap.c1**2 + 4.0 * qmap.c2 * d
    if np.any(rad < -_RADICAND_TOL * qmap.c1**2):
        raise DomainError(f"value below map minimum {qmap.min_value:.6g}")
    out = 2.0 * d / (qmap.c1 + np.sqrt(np.maximum(rad, 0.0)))
    return out if out.ndim else float(out)


def drive_power_coefficients(v_i, v_next, gamma_i, gamma_next, delta, params: PowertrainParams) -> EtaCoeffs:
    """Whole-aircraft drive power as ``eta2 m^2 + eta1 m + eta0`` (MW).

    The angle of attack is eliminated between the lift balance (vertical
    thrust component dropped) and the drag-axis power balance.
    """
    if v_i <= 0:
        raise ValueError("airspeed must be positive")
    p = params
    g = p.g_accel
    dv2 = (v_next**2 - v_i**2) / delta
    dgamma = (gamma_next - gamma_i) / delta
    c = v_i * dgamma + g * math.cos(gamma_i)
    eta2 = 2.0 * p.a2 * c**2 / (p.b1**2 * p.air_density * p.wing_area * v_i)
    eta1 = (
        0.5 * dv2
        + g * math.sin(gamma_i) * v_i
        - 2.0 * p.a2 * p.b0 * c * v_i / p.b1**2
        + p.a1 / p.b1 * c * v_i
    )
    eta0 = 0.5 * p.air_density * p.wing_area * v_i**3 * (
        p.a2 * p.b0**2 / p.b1**2 - p.a1 * p.b0 / p.b1 + p.a0
    )
    return EtaCoeffs(eta2 * 1e-6, eta1 * 1e-6, eta0 * 1e-6)


def drive_power(eta: EtaCoeffs, m, n_systems: int | None = None):
    """Evaluate the drive-power quadratic; divided by ``n_systems`` if given."""
    m = np.asarray(m, dtype=float)
    out = (eta.eta2 * m + eta.eta1) * m + eta.eta0
    if n_systems:
        out = out / n_systems
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class AlphaCheck:
    alpha: float
    in_range: bool


def recover_alpha(m, v, gamma, dgamma, params: PowertrainParams) -> AlphaCheck:
    """Angle of attack (deg) implied by the lift balance; flags out-of-range values."""
    if v <= 0:
        raise ValueError("airspeed must be positive")
    qs = 0.5 * params.air_density * params.wing_area * v**2
    cl = m * (v * dgamma + params.g_accel * math.cos(gamma)) / qs
    alpha = (cl - params.b0) / params.b1
    lo, hi = params.alpha_range
    return AlphaCheck(alpha, lo <= alpha <= hi)
