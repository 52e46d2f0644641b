"""Operator-splitting solver for the unified convex program.

Constraint blocks, in penalty order::

    1  chi - xi + f_phi(m, p_b)        = 0
    2  m + Psi xi                       = m0 Phi
    3  E + PsiE zeta                    = E0 Phi
    4  xi - phi                         = 0
    5  zeta - p_b                       = 0

``Psi`` is the strictly lower-triangular step matrix (entries ``delta``) so
``m_i`` is the mass at the start of step ``i``.  SOC is tracked after each
step, ``PsiE = Psi + delta I``, which keeps the terminal charge inside its
bounds as well.

Multipliers are stored in scaled form (``lambda_n`` in the squared penalty
terms); the unscaled duals are ``sigma_n lambda_n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .. import _fphi
from ..convex import ConvexProblem

SIGMA0 = (50.0, 3.69e-7, 6.96e-7, 20.29, 0.83)
GATE = 10.0


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    eps_rel: float = 5e-6
    eps_abs: float = 0.0
    F_sigma: int = 500
    max_iter: int = 100_000
    mu: float = 10.0
    tau_max: float = 100.0
    gate: float = GATE  # penalties adapt only while a relative residual exceeds this
    newton_tol: float = 1e-10
    newton_iter: int = 20
    sigma0: tuple = SIGMA0
    # step length at which sigma0 applies; the mass and SOC penalties scale
    # with sigma_ref_step / delta so iteration counts stay flat as N grows
    sigma_ref_step: Optional[float] = 60.0
    trace: bool = True
    backend: Optional[str] = None  # None: compiled kernel when available

    def __post_init__(self):
        if not (self.eps_rel > 0 or self.eps_abs > 0):
            raise ValueError("need eps_rel > 0 or eps_abs > 0")
        if self.eps_rel < 0 or self.eps_abs < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.F_sigma < 1 or self.max_iter < 1:
            raise ValueError("F_sigma and max_iter must be at least 1")
        if self.gate < 0:
            raise ValueError("gate must be nonnegative")
        if self.mu <= 1 or self.tau_max <= 1:
            raise ValueError("mu and tau_max must exceed 1")
        if len(self.sigma0) != 5 or min(self.sigma0) <= 0:
            raise ValueError("sigma0 needs five positive penalties")
        if self.sigma_ref_step is not None and self.sigma_ref_step <= 0:
            raise ValueError("sigma_ref_step must be positive")

    def with_(self, **changes) -> "SolverOptions":
        return replace(self, **changes)

    def initial_sigma(self, delta: float) -> np.ndarray:
        sigma = np.array(self.sigma0, dtype=float)
        if self.sigma_ref_step is not None:
            sigma[1:3] *= self.sigma_ref_step / delta
        return sigma


# --------------------------------------------------------------------------
# structured linear algebra


def psi(v, delta):
    """``Psi v``: exclusive running sum scaled by delta."""
    c = np.cumsum(v)
    return delta * (c - v)


def psi_t(v, delta):
    c = np.cumsum(v[::-1])[::-1]
    return delta * (c - v)


def psi_e(v, delta):
    return delta * np.cumsum(v)


def psi_e_t(v, delta):
    return delta * np.cumsum(v[::-1])[::-1]


def psi_matrix(N: int, delta: float, inclusive: bool = False) -> np.ndarray:
    return delta * np.tril(np.ones((N, N)), 0 if inclusive else -1)


class ShiftedGramSolver:
    """Solves ``(a I + b Psi^T Psi) x = r`` in O(N).

    With ``D = I - S`` (``S`` the down-shift) and ``x = D w`` the system
    becomes tridiagonal: ``(a D^T D + b delta^2 P) w = D^T r`` where
    ``P = diag(1, ..., 1, 0)`` for the strict step matrix and ``P = I`` for
    the inclusive one.  The tridiagonal matrix is factored once.
    """

    def __init__(self, N: int, delta: float, a: float, b: float, inclusive: bool = False):
        if a <= 0 or b < 0:
            raise SolverError(f"invalid shifted Gram coefficients a={a}, b={b}")
        self.N, self.a, self.b, self.inclusive = N, a, b, inclusive
        diag = np.full(N, 2.0 * a)
        diag[-1] = a
        p = np.ones(N)
        if not inclusive:
            p[-1] = 0.0
        diag += b * delta * delta * p
        ab = np.zeros((2, N))
        ab[0, 1:] = -a
        ab[1] = diag
        self.diag, self.off = diag, -a
        self._chol = cholesky_banded(ab)

    def solve(self, r):
        rhs = np.asarray(r, dtype=float).copy()
        rhs[:-1] -= r[1:]
        w = cho_solve_banded((self._chol, False), rhs)
        x = w.copy()
        x[1:] -= w[:-1]
        return x


# --------------------------------------------------------------------------
# state


@dataclass
class AdmmState:
    chi: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    E: np.ndarray
    phi: np.ndarray
    m: np.ndarray
    p_b: np.ndarray
    lam: np.ndarray  # (5, N) scaled multipliers
    sigma: np.ndarray  # (5,)
    f: np.ndarray  # f_phi at the current (m, p_b)
    j: int = 0
    history: list = field(default_factory=list)
    _xi_solver: Optional[ShiftedGramSolver] = field(default=None, repr=False)
    _zeta_solver: Optional[ShiftedGramSolver] = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return len(self.xi)

    def x_blocks(self):
        return self.chi, self.xi, self.zeta, self.E, self.phi

    def copy(self) -> "AdmmState":
        out = AdmmState(
            *(a.copy() for a in (self.chi, self.xi, self.zeta, self.E, self.phi, self.m, self.p_b,
                                 self.lam, self.sigma, self.f)),
            j=self.j, history=list(self.history),
        )
        out._xi_solver, out._zeta_solver = self._xi_solver, self._zeta_solver
        return out

    def solvers(self, delta: float):
        """Cached factorizations for the xi and zeta solves at the current penalties."""
        s1, s2, s3, s4, s5 = self.sigma
        xs = self._xi_solver
        if xs is None or xs.a != s1 + s4 or xs.b != s2:
            self._xi_solver = ShiftedGramSolver(self.N, delta, s1 + s4, s2)
        zs = self._zeta_solver
        if zs is None or zs.a != s5 or zs.b != s3:
            self._zeta_solver = ShiftedGramSolver(self.N, delta, s5, s3, inclusive=True)
        return self._xi_solver, self._zeta_solver


def init_state(problem: ConvexProblem, opts: SolverOptions = SolverOptions()) -> AdmmState:
    N, d = problem.N, problem.delta
    lo, hi = problem.soc_bounds
    p_b = np.array(problem.pb_hi, dtype=float)
    zeta = p_b.copy()
    xi = np.array(problem.phi_lo, dtype=float)
    phi = xi.copy()
    E = np.clip(problem.E0 - psi_e(zeta, d), lo, hi)
    m = problem.m0 - psi(xi, d)
    f, _ = _fphi.fphi(problem.steps, m, p_b)
    chi = np.maximum(xi - f, 0.0)
    return AdmmState(
        chi=chi, xi=xi, zeta=zeta, E=E, phi=phi, m=m, p_b=p_b,
        lam=np.zeros((5, N)), sigma=opts.initial_sigma(d), f=f,
    )


# --------------------------------------------------------------------------
# scalar sub-minimisations


def _safeguarded_newton(grad_hess, x0, lo, hi, tol, max_iter):
    """Per-element root of the gradient inside ``[lo, hi]`` where
    ``grad(lo) < 0 < grad(hi)``.  Newton steps that leave the bracket are
    replaced by bisection; each element stops on its own once the step is
    below ``tol`` relative or the gradient vanishes."""
    x = np.clip(x0, lo, hi)
    lo, hi = lo.copy(), hi.copy()
    active = np.ones(x.shape, dtype=bool)
    for _ in range(max_iter):
        g, h = grad_hess(x)
        zero = active & (g == 0)
        active &= ~zero
        if not np.any(active):
            break
        lo = np.where(active & (g < 0), x, lo)
        hi = np.where(active & (g > 0), x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = g / h
        xn = x - dx
        done = np.isfinite(xn) & (np.abs(dx) <= tol * (1.0 + np.abs(x)))
        outside = ~done & (~((xn > lo) & (xn < hi)) | ~np.isfinite(xn))
        xn = np.where(outside, 0.5 * (lo + hi), xn)
        x = np.where(active, xn, x)
        active &= ~done
        if not np.any(active):
            break
    return x


def _pb_grad(sd, m, a, target, s1, s5, p):
    """Gradient and a positive curvature model of the battery subproblem."""
    f, _, fp, _, _, fpp, _ = _fphi.fphi(sd, m, p, order=2)
    u = a + f
    return s1 * u * fp - s5 * (target - p), s1 * (fp * fp + np.maximum(u, 0.0) * fpp) + s5


def _pb_update(sd, m, a, zeta, l5, s1, s5, lo, hi, x0, opts):
    """Minimiser over the battery box; endpoints win when the gradient there points outward."""
    target = zeta + l5
    g_lo, _ = _pb_grad(sd, m, a, target, s1, s5, lo)
    g_hi, _ = _pb_grad(sd, m, a, target, s1, s5, hi)
    out = np.where(g_lo >= 0, lo, hi)
    interior = (g_lo < 0) & (g_hi > 0)
    if np.any(interior):
        idx = np.nonzero(interior)[0]
        sub = sd.take(idx)
        mi, ai, ti = m[idx], a[idx], target[idx]
        out[idx] = _safeguarded_newton(
            lambda p: _pb_grad(sub, mi, ai, ti, s1, s5, p),
            x0[idx], lo[idx].copy(), hi[idx].copy(), opts.newton_tol, opts.newton_iter,
        )
    return out


def _m_grad(sd, p, a, c, s1, s2, m):
    f, fm, _, fmm, _, _, _ = _fphi.fphi(sd, m, p, order=2)
    u = a + f
    return s1 * u * fm + s2 * (m - c), s1 * (fm * fm + np.maximum(u, 0.0) * fmm) + s2


def _m_update(sd, p, a, c, s1, s2, x0, opts):
    """Unconstrained minimiser; the bracket is grown geometrically around ``c``."""
    g_c, _ = _m_grad(sd, p, a, c, s1, s2, c)
    width = np.abs(g_c) / s2 + 1e-9 * (1.0 + np.abs(c))
    lo = np.where(g_c > 0, c - width, c)
    hi = np.where(g_c > 0, c, c + width)
    for _ in range(60):
        g_lo, _ = _m_grad(sd, p, a, c, s1, s2, lo)
        g_hi, _ = _m_grad(sd, p, a, c, s1, s2, hi)
        bad_lo, bad_hi = g_lo > 0, g_hi < 0
        grow = bad_lo | bad_hi
        if not np.any(grow):
            break
        width = np.where(grow, 2.0 * width, width)
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)
    x = _safeguarded_newton(
        lambda m: _m_grad(sd, p, a, c, s1, s2, m), x0, lo, hi, opts.newton_tol, opts.newton_iter
    )
    return np.where(g_lo == 0, lo, np.where(g_hi == 0, hi, x))


# --------------------------------------------------------------------------
# iteration


def step(state: AdmmState, problem: ConvexProblem, opts: SolverOptions = SolverOptions()) -> AdmmState:
    """One Gauss-Seidel sweep over the seven primal blocks plus the dual ascent.

    Returns a new state; ``state`` is left untouched.
    """
    d = problem.delta
    sd = problem.steps
    s1, s2, s3, s4, s5 = state.sigma
    l1, l2, l3, l4, l5 = state.lam
    m0, E0 = problem.m0, problem.E0
    lo_e, hi_e = problem.soc_bounds
    xi_solver, zeta_solver = state.solvers(d)
    f = state.f

    chi = np.maximum(state.xi - f - l1, 0.0)
    rhs = -d + s1 * (chi + f + l1) - s2 * psi_t(state.m - m0 + l2, d) + s4 * (state.phi - l4)
    xi = xi_solver.solve(rhs)
    rhs = -s3 * psi_e_t(state.E - E0 + l3, d) + s5 * (state.p_b - l5)
    zeta = zeta_solver.solve(rhs)
    E = np.clip(E0 - psi_e(zeta, d) - l3, lo_e, hi_e)
    a = chi - xi + l1
    p_b = _pb_update(sd, state.m, a, zeta, l5, s1, s5,
                     np.asarray(problem.pb_lo, dtype=float), np.asarray(problem.pb_hi, dtype=float),
                     state.p_b, opts)
    phi = np.clip(xi + l4, problem.phi_lo, problem.phi_hi)
    psi_xi = psi(xi, d)
    m = _m_update(sd, p_b, a, m0 - psi_xi - l2, s1, s2, state.m, opts)
    f_new, _ = _fphi.fphi(sd, m, p_b)

    lam = np.empty_like(state.lam)
    lam[0] = l1 + chi - xi + f_new
    lam[1] = l2 + m - m0 + psi_xi
    lam[2] = l3 + E - E0 + psi_e(zeta, d)
    lam[3] = l4 + xi - phi
    lam[4] = l5 + zeta - p_b
    out = AdmmState(chi=chi, xi=xi, zeta=zeta, E=E, phi=phi, m=m, p_b=p_b, lam=lam,
                    sigma=state.sigma.copy(), f=f_new, j=state.j + 1, history=state.history)
    out._xi_solver, out._zeta_solver = state._xi_solver, state._zeta_solver
    return out


@dataclass(frozen=True)
class Residuals:
    r: np.ndarray  # (5, N)
    s: np.ndarray  # (2, N): mass rows then battery rows
    r_norm: float
    s_norm: float
    r_block: np.ndarray  # (5,)
    eps_primal: float
    eps_dual: float
    primal_scale: float  # max(||b(z)||, ||Bx||, ||c||)
    dual_scale: float  # ||grad_b^T lambda||, scaled multipliers


def residuals(prev: AdmmState, state: AdmmState, problem: ConvexProblem,
              opts: SolverOptions = SolverOptions()) -> Residuals:
    """Primal residual ``b(z) + Bx - c`` and dual residual
    ``grad_b(z)^T R B (x_prev - x)`` with the penalties of ``prev``."""
    d, N = problem.delta, problem.N
    sd = problem.steps
    _, fm, fp, _ = _fphi.fphi(sd, state.m, state.p_b, order=1)
    f = state.f
    psi_xi = psi(state.xi, d)
    psi_zeta = psi_e(state.zeta, d)
    bx = np.stack([
        state.chi - state.xi, psi_xi, state.E + psi_zeta, state.xi - state.phi, state.zeta,
    ])
    bz = np.stack([f, state.m, np.zeros(N), np.zeros(N), -state.p_b])
    c = np.zeros((5, N))
    c[1] = problem.m0
    c[2] = problem.E0
    r = bz + bx - c

    s1, s2, s3, s4, s5 = prev.sigma
    dchi = prev.chi - state.chi
    dxi = prev.xi - state.xi
    dzeta = prev.zeta - state.zeta
    bdx1 = dchi - dxi
    bdx2 = psi(dxi, d)
    bdx5 = dzeta
    s = np.stack([fm * s1 * bdx1 + s2 * bdx2, fp * s1 * bdx1 - s5 * bdx5])

    l1, l2, l5 = state.lam[0], state.lam[1], state.lam[4]
    dual = np.stack([fm * l1 + l2, fp * l1 - l5])

    r_block = np.sqrt(np.sum(r * r, axis=1))
    r_norm = float(math.sqrt(np.sum(r_block**2)))
    s_norm = float(np.linalg.norm(s))
    primal_scale = max(float(np.linalg.norm(bz)), float(np.linalg.norm(bx)), float(np.linalg.norm(c)))
    dual_scale = float(np.linalg.norm(dual))
    eps_p = math.sqrt(5 * N) * opts.eps_abs + opts.eps_rel * primal_scale
    eps_d = math.sqrt(2 * N) * opts.eps_abs + opts.eps_rel * dual_scale
    return Residuals(r, s, r_norm, s_norm, r_block, eps_p, eps_d, primal_scale, dual_scale)


def update_penalties(state: AdmmState, res: Residuals, opts: SolverOptions = SolverOptions()) -> AdmmState:
    """Residual-balancing penalty rule, applied when ``state.j`` is a multiple
    of ``F_sigma`` and a relative residual exceeds ``opts.gate``.

    Scaled multipliers are rescaled so the unscaled duals are preserved.
    """
    if state.j % opts.F_sigma != 0:
        return state
    rel_p = res.r_norm / res.primal_scale if res.primal_scale > 0 else math.inf
    rel_d = res.s_norm / res.dual_scale if res.dual_scale > 0 else math.inf
    if not max(rel_p, rel_d) > opts.gate:
        return state
    new_sigma = penalty_rule(state.sigma, res.r_block, res.r_norm, res.s_norm, opts.mu, opts.tau_max)
    if np.array_equal(new_sigma, state.sigma):
        return state
    out = state.copy()
    out.lam = state.lam * (state.sigma / new_sigma)[:, None]
    out.sigma = new_sigma
    return out


def penalty_rule(sigma, r_block, r_norm, s_norm, mu, tau_max) -> np.ndarray:
    gamma = math.sqrt(r_norm / s_norm) if s_norm > 0 else math.inf
    if 1.0 <= gamma < tau_max:
        tau = gamma
    elif 1.0 / tau_max < gamma < 1.0:
        tau = 1.0 / gamma
    else:
        tau = tau_max
    out = np.array(sigma, dtype=float)
    for n in range(5):
        if r_block[n] > mu * s_norm:
            out[n] = sigma[n] * tau
        elif s_norm > mu * r_block[n]:
            out[n] = sigma[n] / tau
    return out


CONVERGED = "converged"
ITERATION_LIMIT = "iteration_limit"
CONTINUE = "continue"


def check_stop(res: Residuals, state: AdmmState, opts: SolverOptions = SolverOptions()) -> str:
    if res.r_norm <= res.eps_primal and res.s_norm <= res.eps_dual:
        return CONVERGED
    if state.j > opts.max_iter:
        return ITERATION_LIMIT
    return CONTINUE
