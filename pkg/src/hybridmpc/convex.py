"""The unified convex energy-management program for both topologies.

Decision variables per step: fuel rate ``phi`` (kg/s), battery chemical
power ``p_b`` (MW), and the affine states mass ``m`` (kg) and SOC ``E`` (MJ).
All quantities are per propulsion system.  The power balance enters as the
relaxed convex constraint ``phi_i >= f_phi_i(m_i, p_b_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _fphi
from .models import DomainError, PowertrainParams, Topology
from .schedule import CoefficientSchedule


class ProblemError(ValueError):
    pass


@dataclass
class SolverStats:
    iterations: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    eps_primal: float = 0.0
    eps_dual: float = 0.0
    wall_time: float = 0.0
    status: str = "converged"
    backend: str = ""
    trace: Optional[dict] = None


@dataclass
class Solution:
    """Per-step optimum; ``m`` and ``E`` hold the N+1 knot values."""

    phi: np.ndarray
    p_b: np.ndarray
    m: np.ndarray
    E: np.ndarray
    objective: float
    stats: SolverStats = field(default_factory=SolverStats)

    @property
    def converged(self) -> bool:
        return self.stats.status in ("converged", "trivial")


@dataclass(frozen=True)
class ConvexProblem:
    N: int
    delta: float
    m0: float  # per-system share of the aircraft mass, kg
    E0: float
    soc_bounds: tuple
    schedule: CoefficientSchedule
    topology: Topology
    steps: _fphi.StepData
    constant_mass: bool = False

    @property
    def phi_lo(self) -> np.ndarray:
        return self.schedule.phi_lo

    @property
    def phi_hi(self) -> np.ndarray:
        return self.schedule.phi_hi

    @property
    def pb_lo(self) -> np.ndarray:
        return self.schedule.pb_lo

    @property
    def pb_hi(self) -> np.ndarray:
        return self.schedule.pb_hi

    def fphi(self, m, p_b, *, check: bool = True) -> np.ndarray:
        phi, bad = _fphi.fphi(self.steps, m, p_b)
        if check and np.any(bad):
            i = int(np.argmax(bad))
            raise DomainError(f"battery power {np.atleast_1d(p_b)[i]:.6g} MW leaves the motor map branch at step {i}")
        return phi

    def mass_path(self, phi) -> np.ndarray:
        return self.m0 - self.delta * np.concatenate([[0.0], np.cumsum(phi)])

    def soc_path(self, p_b) -> np.ndarray:
        return self.E0 - self.delta * np.concatenate([[0.0], np.cumsum(p_b)])

    def make_solution(self, phi, p_b, stats: Optional[SolverStats] = None) -> Solution:
        phi = np.asarray(phi, dtype=float).copy()
        p_b = np.asarray(p_b, dtype=float).copy()
        return Solution(
            phi=phi,
            p_b=p_b,
            m=self.mass_path(phi),
            E=self.soc_path(p_b),
            objective=float(np.sum(phi) * self.delta),
            stats=stats or SolverStats(),
        )

    def relaxation_gap(self, sol: Solution) -> float:
        """max_i (phi_i - f_phi_i(m_i, p_b_i)) / phi_hi_i."""
        f = self.fphi(sol.m[:-1], sol.p_b)
        return float(np.max((sol.phi - f) / self.phi_hi))

    def violation(self, sol: Solution) -> float:
        """Largest violation of the box, SOC and relaxed balance constraints."""
        E = sol.E[1:]
        lo, hi = self.soc_bounds
        f = self.fphi(sol.m[:-1], sol.p_b, check=False)
        parts = [
            self.phi_lo - sol.phi,
            sol.phi - self.phi_hi,
            self.pb_lo - sol.p_b,
            sol.p_b - self.pb_hi,
            lo - E,
            E - hi,
            f - sol.phi,
        ]
        return float(max(0.0, max(np.max(p) for p in parts)))


def assemble(
    schedule: CoefficientSchedule,
    m0: float,
    E0: float,
    params: PowertrainParams,
    N: Optional[int] = None,
    *,
    constant_mass: bool = False,
) -> ConvexProblem:
    """Problem over the first ``N`` steps of ``schedule``.

    ``m0`` is the whole-aircraft mass (kg); the program works with one
    system's share.  With ``constant_mass`` the drive power is frozen at its
    value for ``m0`` so the optimiser ignores the mass variation.
    """
    n_avail = len(schedule)
    if N is None:
        N = n_avail
    if N < 1:
        raise ProblemError("horizon N must be at least 1")
    if N > n_avail:
        raise ProblemError(f"horizon N={N} exceeds schedule length {n_avail}")
    sched = schedule.slice(slice(0, N))
    delta = float(sched.delta)
    lo, hi = params.soc_range
    if not lo - 1e-9 <= E0 <= hi + 1e-9:
        raise ProblemError(f"initial SOC {E0} outside [{lo}, {hi}]")
    ms = m0 / params.n_systems
    if ms - delta * float(np.sum(sched.phi_hi)) <= 0:
        raise ProblemError("mass could become non-positive over the horizon")
    kap, nu, beta, eta = sched.kappa, sched.nu, sched.beta, sched.eta
    if constant_mass:
        p_fixed = (eta[:, 0] * ms + eta[:, 1]) * ms + eta[:, 2]
        e2, e1, e0 = np.zeros(N), np.zeros(N), p_fixed
    else:
        e2, e1, e0 = eta[:, 0], eta[:, 1], eta[:, 2]
    steps = _fphi.StepData(
        kap[:, 0].copy(), kap[:, 1].copy(), kap[:, 2].copy(),
        nu[:, 0].copy(), nu[:, 1].copy(), nu[:, 2].copy(),
        beta[:, 0].copy(), beta[:, 1].copy(), beta[:, 2].copy(),
        np.array(e2, dtype=float), np.array(e1, dtype=float), np.array(e0, dtype=float),
        float(params.bus_loss_coeff), sched.topology is Topology.SERIES,
    )
    return ConvexProblem(
        N=N, delta=delta, m0=ms, E0=float(E0), soc_bounds=(float(lo), float(hi)),
        schedule=sched, topology=sched.topology, steps=steps, constant_mass=constant_mass,
    )


def f_phi(i: int, m: float, p_b: float, problem: ConvexProblem) -> float:
    """Fuel rate at step ``i`` (scalar form)."""
    sd = problem.steps.take(i)
    phi, bad = _fphi.fphi(sd, m, p_b)
    if bad:
        raise DomainError(f"battery power {p_b:.6g} MW leaves the motor map branch at step {i}")
    return float(phi)


def f_phi_partials(i: int, m: float, p_b: float, problem: ConvexProblem):
    """(d phi/d m, d phi/d p_b) at step ``i``."""
    sd = problem.steps.take(i)
    _, dm, dp, bad = _fphi.fphi(sd, m, p_b, order=1)
    if bad:
        raise DomainError(f"battery power {p_b:.6g} MW leaves the motor map branch at step {i}")
    return float(dm), float(dp)


def trivial_solution(problem: ConvexProblem) -> Optional[Solution]:
    """Max-battery solution when it never breaks the SOC limits, else None."""
    lo, hi = problem.soc_bounds
    p_b = np.array(problem.pb_hi, dtype=float)
    E = problem.soc_path(p_b)[1:]
    tol = 1e-12 * max(1.0, abs(hi))
    if np.any(E < lo - tol) or np.any(E > hi + tol):
        return None
    phi = np.empty(problem.N)
    m = problem.m0
    for i in range(problem.N):
        f = f_phi(i, m, p_b[i], problem)
        if f > problem.phi_hi[i] * (1 + 1e-12):
            return None
        phi[i] = max(f, problem.phi_lo[i])
        m -= phi[i] * problem.delta
    return problem.make_solution(phi, p_b, SolverStats(status="trivial"))
