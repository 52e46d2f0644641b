"""Reference solvers: exhaustive enumeration for tiny horizons and a dense
log-barrier interior-point method.  Both exist to be trusted, not to be fast.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _fphi
from .convex import ConvexProblem, Solution, SolverStats


class OracleInfeasible(RuntimeError):
    pass


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    points_per_step: int = 12
    variable: str = "p_b"
    budget: int = 10_000_000

    def __post_init__(self):
        if self.points_per_step < 2:
            raise ValueError("points_per_step must be at least 2")
        if self.variable != "p_b":
            raise ValueError("only the battery power is gridded")


# --------------------------------------------------------------------------
# enumeration


def brute_force_solve(problem: ConvexProblem, grid: GridSpec = GridSpec()) -> Solution:
    """Minimum-fuel battery sequence over a uniform grid on each step's box.

    Fuel follows the equality dynamics ``phi_i = f_phi_i(m_i, p_i)``, with
    ``phi`` raised to its lower bound where the map falls below it.  Ties are
    broken by the first sequence in lexicographic grid order.
    """
    N, k = problem.N, grid.points_per_step
    if k**N > grid.budget:
        raise BudgetError(f"{k}^{N} sequences exceed the budget of {grid.budget}")
    t0 = time.perf_counter()
    levels = [np.linspace(lo, hi, k) if hi > lo else np.array([lo])
              for lo, hi in zip(problem.pb_lo, problem.pb_hi)]
    lo_e, hi_e = problem.soc_bounds
    tol_e = 1e-9 * max(1.0, abs(hi_e))
    sd, d = problem.steps, problem.delta

    # enumerate in chunks of leading choices, vectorised over the trailing steps
    lead = max(0, N - 4)
    tail_grid = np.array(list(itertools.product(*levels[lead:])), dtype=float)
    best_obj, best = math.inf, None
    for head in itertools.product(*levels[:lead]):
        seqs = np.hstack([np.tile(np.array(head, dtype=float), (len(tail_grid), 1)), tail_grid])
        E = problem.E0 - d * np.cumsum(seqs, axis=1)
        ok = np.all((E >= lo_e - tol_e) & (E <= hi_e + tol_e), axis=1)
        if not np.any(ok):
            continue
        seqs = seqs[ok]
        m = np.full(len(seqs), problem.m0)
        fuel = np.zeros(len(seqs))
        feasible = np.ones(len(seqs), dtype=bool)
        for i in range(N):
            f, bad = _fphi.fphi(sd.take(i), m, seqs[:, i])
            phi = np.maximum(f, problem.phi_lo[i])
            feasible &= ~bad & (f <= problem.phi_hi[i] * (1 + 1e-12))
            fuel += phi * d
            m = m - phi * d
        if not np.any(feasible):
            continue
        fuel = np.where(feasible, fuel, math.inf)
        i_min = int(np.argmin(fuel))
        if fuel[i_min] < best_obj:
            best_obj, best = float(fuel[i_min]), seqs[i_min].copy()
    if best is None:
        raise OracleInfeasible("no grid sequence satisfies the SOC and fuel-rate bounds")
    phi = equality_fuel(problem, best)
    stats = SolverStats(iterations=k**N, wall_time=time.perf_counter() - t0, backend="enumeration")
    return problem.make_solution(phi, best, stats)


def grid_rounding_bound(problem: ConvexProblem, sol: Solution, grid: GridSpec = GridSpec()) -> float:
    """Upper bound on ``brute_force - sol.objective``.

    Rounds the battery powers of ``sol`` onto the grid so that the rounded
    cumulative discharge trails the continuous one by less than a grid step
    (each step takes the largest level not exceeding the remaining need).
    The rounded SOC then never falls below the continuous one.  The fuel of
    that grid sequence bounds the enumeration optimum from above; returns inf
    when the rounded sequence breaks the upper SOC limit or the fuel cap.
    """
    k = grid.points_per_step
    lo, hi = problem.pb_lo, problem.pb_hi
    target = np.cumsum(np.clip(sol.p_b, lo, hi))
    p = np.empty(problem.N)
    done = 0.0
    for i in range(problem.N):
        if hi[i] <= lo[i]:
            p[i] = lo[i]
        else:
            h = (hi[i] - lo[i]) / (k - 1)
            j = np.floor((target[i] - done - lo[i]) / h * (1 + 1e-12))
            p[i] = lo[i] + min(max(j, 0), k - 1) * h
        done += p[i]
    E = problem.soc_path(p)[1:]
    tol = 1e-9 * max(1.0, abs(problem.soc_bounds[1]))
    if np.any(E > problem.soc_bounds[1] + tol) or np.any(E < problem.soc_bounds[0] - tol):
        return math.inf
    phi = equality_fuel(problem, p)
    if np.any(phi > problem.phi_hi * (1 + 1e-12)):
        return math.inf
    return float(np.sum(phi) * problem.delta - sol.objective)


def equality_fuel(problem: ConvexProblem, p_b) -> np.ndarray:
    """Fuel rates obtained by running the mass recursion with equality."""
    phi = np.empty(problem.N)
    m = problem.m0
    for i in range(problem.N):
        f, _ = _fphi.fphi(problem.steps.take(i), m, p_b[i])
        phi[i] = max(float(f), problem.phi_lo[i])
        m -= phi[i] * problem.delta
    return phi


# --------------------------------------------------------------------------
# log barrier


@dataclass(frozen=True)
class BarrierOptions:
    t0: float = 1.0
    growth: float = 10.0
    newton_tol: float = 1e-10
    alpha: float = 0.3
    beta: float = 0.5
    max_newton: int = 200


class _Barrier:
    """Log-barrier objective in the stacked variable ``[phi; p_b]``."""

    def __init__(self, problem: ConvexProblem):
        self.p = problem
        N, d = problem.N, problem.delta
        self.N = N
        self.psi = d * np.tril(np.ones((N, N)), -1)
        self.psi_e = d * np.tril(np.ones((N, N)))
        self.phi_lo = np.asarray(problem.phi_lo, dtype=float)
        self.phi_hi = np.asarray(problem.phi_hi, dtype=float)
        self.pb_lo = np.asarray(problem.pb_lo, dtype=float)
        self.pb_hi = np.asarray(problem.pb_hi, dtype=float)
        self.free_phi = self.phi_hi > self.phi_lo
        self.free_pb = self.pb_hi > self.pb_lo
        lo, hi = problem.soc_bounds
        self.soc_free = hi > lo
        self.free = np.concatenate([self.free_phi, self.free_pb]) if self.soc_free else \
            np.concatenate([self.free_phi, np.zeros(N, dtype=bool)])
        self.n_constraints = (
            N + 2 * int(self.free_phi.sum()) + 2 * int(self.free_pb.sum()) + (2 * N if self.soc_free else 0)
        )

    def split(self, z):
        return z[: self.N], z[self.N:]

    def slacks(self, z):
        phi, pb = self.split(z)
        p = self.p
        m = p.m0 - self.psi @ phi
        E = p.E0 - self.psi_e @ pb
        lo, hi = p.soc_bounds
        f, bad = _fphi.fphi(p.steps, m, pb)
        if np.any(bad):
            return None
        parts = [phi - f,
                 (phi - self.phi_lo)[self.free_phi], (self.phi_hi - phi)[self.free_phi],
                 (pb - self.pb_lo)[self.free_pb], (self.pb_hi - pb)[self.free_pb]]
        if self.soc_free:
            parts += [E - lo, hi - E]
        return np.concatenate(parts)

    def value(self, z, t):
        s = self.slacks(z)
        if s is None or np.any(s <= 0):
            return math.inf
        phi, _ = self.split(z)
        return t * self.p.delta * float(np.sum(phi)) - float(np.sum(np.log(s)))

    def grad_hess(self, z, t):
        p, N = self.p, self.N
        phi, pb = self.split(z)
        m = p.m0 - self.psi @ phi
        f, fm, fp, fmm, fmp, fpp, _ = _fphi.fphi(p.steps, m, pb, order=2)
        s = phi - f
        w = 1.0 / s
        # ds/dz = [I + diag(fm) Psi, -diag(fp)]
        G = np.hstack([np.eye(N) + fm[:, None] * self.psi, -np.diag(fp)])
        grad = np.zeros(2 * N)
        grad[:N] = t * p.delta
        grad -= G.T @ w
        H = (G.T * (w * w)) @ G
        # curvature of f composed with the affine mass map
        K = np.zeros((2 * N, 2 * N))
        K[:N, :N] = (self.psi.T * (w * fmm)) @ self.psi
        cross = -(self.psi.T * (w * fmp))
        K[:N, N:] = cross
        K[N:, :N] = cross.T
        K[N:, N:] = np.diag(w * fpp)
        H += K

        def box(x, lo, hi, free, sl):
            a = 1.0 / (x - lo)
            b = 1.0 / (hi - x)
            g = np.where(free, -a + b, 0.0)
            h = np.where(free, a * a + b * b, 0.0)
            grad[sl] += g
            H[sl, sl] += np.diag(h)

        box(phi, self.phi_lo, self.phi_hi, self.free_phi, slice(0, N))
        box(pb, self.pb_lo, self.pb_hi, self.free_pb, slice(N, 2 * N))
        if self.soc_free:
            lo, hi = p.soc_bounds
            E = p.E0 - self.psi_e @ pb
            a = 1.0 / (E - lo)
            b = 1.0 / (hi - E)
            # dE/dpb = -psi_e
            grad[N:] += self.psi_e.T @ (a - b)
            H[N:, N:] += (self.psi_e.T * (a * a + b * b)) @ self.psi_e
        return grad, H


def _strict_start(problem: ConvexProblem) -> np.ndarray:
    """Strictly feasible point built step by step: battery power steers the
    SOC toward mid-range inside its box, fuel rate sits midway between the
    map value and the upper bound."""
    N, d = problem.N, problem.delta
    lo_e, hi_e = problem.soc_bounds
    mid = 0.5 * (lo_e + hi_e)
    E, m = problem.E0, problem.m0
    phi = np.empty(N)
    pb = np.empty(N)
    for i in range(N):
        lo, hi = problem.pb_lo[i], problem.pb_hi[i]
        if lo_e == hi_e:
            if not lo <= 0.0 <= hi:
                raise OracleInfeasible(f"SOC is pinned but zero battery power is outside the box at step {i}")
            p = 0.0
        elif hi > lo:
            margin = 0.05 * (hi - lo)
            want = (E - mid) / (d * max(1, N - i))
            p = min(max(want, lo + margin), hi - margin)
            if lo_e < hi_e:
                # keep the next SOC strictly inside
                p_max = (E - lo_e) / d
                p_min = (E - hi_e) / d
                if p >= p_max or p <= p_min:
                    p = 0.5 * (max(p_min, lo) + min(p_max, hi))
        else:
            p = lo
        pb[i] = p
        E -= p * d
        f, bad = _fphi.fphi(problem.steps.take(i), m, p)
        if bad:
            raise OracleInfeasible(f"start point leaves the motor map at step {i}")
        f = float(f)
        base = max(f, problem.phi_lo[i])
        if base >= problem.phi_hi[i]:
            raise OracleInfeasible(f"no fuel slack at step {i}")
        phi[i] = base + 0.5 * (problem.phi_hi[i] - base)
        m -= phi[i] * d
    return np.concatenate([phi, pb])


def barrier_solve(problem: ConvexProblem, tol: float = 1e-8, opts: BarrierOptions = BarrierOptions()) -> Solution:
    """Interior-point solution with duality gap ``n_constraints / t <= tol (1 + |objective|)``."""
    t0_wall = time.perf_counter()
    bar = _Barrier(problem)
    z = _strict_start(problem)
    s = bar.slacks(z)
    if s is None or np.any(s <= 0):
        raise OracleInfeasible("phase-1 construction did not find a strictly feasible point")
    free = bar.free
    t = opts.t0
    newton_total = 0
    while True:
        for _ in range(opts.max_newton):
            g, H = bar.grad_hess(z, t)
            gf, Hf = g[free], H[np.ix_(free, free)]
            try:
                dz_f = -cho_solve(cho_factor(Hf), gf)
            except LinAlgError:
                dz_f = -np.linalg.lstsq(Hf, gf, rcond=None)[0]
            dec2 = float(-gf @ dz_f)
            newton_total += 1
            if dec2 / 2 <= opts.newton_tol:
                break
            dz = np.zeros_like(z)
            dz[free] = dz_f
            f0 = bar.value(z, t)
            step = 1.0
            while True:
                zn = z + step * dz
                fn = bar.value(zn, t)
                if fn <= f0 - opts.alpha * step * dec2:
                    break
                step *= opts.beta
                if step < 1e-14:
                    break
            if step < 1e-14:
                break
            z = zn
        objective = problem.delta * float(np.sum(z[: problem.N]))
        gap = bar.n_constraints / t
        if gap <= tol * (1 + abs(objective)):
            break
        t *= opts.growth
    phi, pb = bar.split(z)
    stats = SolverStats(iterations=newton_total, wall_time=time.perf_counter() - t0_wall,
                        backend="barrier", primal_residual=0.0, dual_residual=gap)
    return problem.make_solution(phi, pb, stats)
