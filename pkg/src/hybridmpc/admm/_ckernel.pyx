# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled iteration loop.  Mirrors ``solver.step``/``residuals``/
``update_penalties``/``check_stop`` operation for operation; the scalar
fuel-rate composition is a copy of ``_fphi.fphi``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isfinite, INFINITY

cnp.import_array()

cdef double SQRT_NAN = float("nan")


cdef struct Coef:
    double k2, k1, k0, n2, n1, n0, b2, b1, b0, e2, e1, e0


cdef struct Fval:
    double f, fm, fp, fmm, fpp


cdef inline void clamped_quad(double c2, double c1, double c0, double x,
                              double* val, double* d1, double* d2) noexcept nogil:
    cdef double vtx = -c1 / (2 * c2) if c2 > 0 else -INFINITY
    cdef double xc = x if x > vtx else vtx
    val[0] = (c2 * xc + c1) * xc + c0
    if x > vtx:
        d1[0] = 2 * c2 * xc + c1
        d2[0] = 2 * c2
    else:
        d1[0] = 0.0
        d2[0] = 0.0


cdef inline void fphi_eval(Coef* c, double rho, bint series, double m, double p,
                           int order, Fval* out) noexcept nogil:
    cdef double drv = (c.e2 * m + c.e1) * m + c.e0
    cdef double drv_m = 2 * c.e2 * m + c.e1
    cdef double drv_mm = 2 * c.e2
    cdef double q = p - rho * p * p
    cdef double q_p = 1 - 2 * rho * p
    cdef double q_pp = -2 * rho
    cdef double d, rad, s, x, x_q, x_qq, u, phi, f1, f2, x_p, x_pp
    cdef double y, h1, h2, w, z, g1, g2, a, y_m, b, y_mm
    if not series:
        d = q - c.k0
        rad = c.k1 * c.k1 + 4 * c.k2 * d
        s = sqrt(rad) if rad >= 0 else SQRT_NAN
        x = 2 * d / (c.k1 + s)
        u = drv - x
        clamped_quad(c.b2, c.b1, c.b0, u, &phi, &f1, &f2)
        out.f = phi
        if order == 0:
            return
        x_q = 1.0 / s
        x_p = x_q * q_p
        out.fm = f1 * drv_m
        out.fp = -f1 * x_p
        if order == 1:
            return
        x_qq = -2 * c.k2 / (s * s * s)
        x_pp = x_qq * q_p * q_p + x_q * q_pp
        out.fmm = f2 * drv_m * drv_m + f1 * drv_mm
        out.fpp = f2 * x_p * x_p - f1 * x_pp
        return
    clamped_quad(c.k2, c.k1, c.k0, drv, &y, &h1, &h2)
    w = y - q
    clamped_quad(c.n2, c.n1, c.n0, w, &z, &g1, &g2)
    clamped_quad(c.b2, c.b1, c.b0, z, &phi, &f1, &f2)
    out.f = phi
    if order == 0:
        return
    a = f1 * g1
    y_m = h1 * drv_m
    out.fm = a * y_m
    out.fp = -a * q_p
    if order == 1:
        return
    b = f2 * g1 * g1 + f1 * g2
    y_mm = h2 * drv_m * drv_m + h1 * drv_mm
    out.fmm = b * y_m * y_m + a * y_mm
    out.fpp = b * q_p * q_p - a * q_pp


# --------------------------------------------------------------------------
# scalar sub-problems


cdef inline void pb_grad(Coef* c, double rho, bint series, double m, double a, double target,
                         double s1, double s5, double p, double* g, double* h) noexcept nogil:
    cdef Fval fv
    fphi_eval(c, rho, series, m, p, 2, &fv)
    cdef double u = a + fv.f
    g[0] = s1 * u * fv.fp - s5 * (target - p)
    h[0] = s1 * (fv.fp * fv.fp + (u if u > 0.0 else 0.0) * fv.fpp) + s5


cdef inline void m_grad(Coef* c, double rho, bint series, double p, double a, double cc,
                        double s1, double s2, double m, double* g, double* h) noexcept nogil:
    cdef Fval fv
    fphi_eval(c, rho, series, m, p, 2, &fv)
    cdef double u = a + fv.f
    g[0] = s1 * u * fv.fm + s2 * (m - cc)
    h[0] = s1 * (fv.fm * fv.fm + (u if u > 0.0 else 0.0) * fv.fmm) + s2


cdef double newton_pb(Coef* c, double rho, bint series, double m, double a, double target,
                      double s1, double s5, double x0, double lo, double hi,
                      double tol, int max_iter) noexcept nogil:
    cdef double x = x0
    cdef double g, h, xn, dx
    cdef int it
    if x < lo:
        x = lo
    if x > hi:
        x = hi
    for it in range(max_iter):
        pb_grad(c, rho, series, m, a, target, s1, s5, x, &g, &h)
        if g == 0:
            break
        if g < 0:
            lo = x
        elif g > 0:
            hi = x
        dx = g / h
        xn = x - dx
        if isfinite(xn) and fabs(dx) <= tol * (1.0 + fabs(x)):
            x = xn
            break
        if not (xn > lo and xn < hi) or not isfinite(xn):
            xn = 0.5 * (lo + hi)
        x = xn
    return x


cdef double newton_m(Coef* c, double rho, bint series, double p, double a, double cc,
                     double s1, double s2, double x0, double lo, double hi,
                     double tol, int max_iter) noexcept nogil:
    cdef double x = x0
    cdef double g, h, xn, dx
    cdef int it
    if x < lo:
        x = lo
    if x > hi:
        x = hi
    for it in range(max_iter):
        m_grad(c, rho, series, p, a, cc, s1, s2, x, &g, &h)
        if g == 0:
            break
        if g < 0:
            lo = x
        elif g > 0:
            hi = x
        dx = g / h
        xn = x - dx
        if isfinite(xn) and fabs(dx) <= tol * (1.0 + fabs(x)):
            x = xn
            break
        if not (xn > lo and xn < hi) or not isfinite(xn):
            xn = 0.5 * (lo + hi)
        x = xn
    return x


cdef double pb_update(Coef* c, double rho, bint series, double m, double a, double zeta, double l5,
                      double s1, double s5, double lo, double hi, double x0,
                      double tol, int max_iter) noexcept nogil:
    cdef double target = zeta + l5
    cdef double g_lo, g_hi, h
    pb_grad(c, rho, series, m, a, target, s1, s5, lo, &g_lo, &h)
    pb_grad(c, rho, series, m, a, target, s1, s5, hi, &g_hi, &h)
    if g_lo < 0 and g_hi > 0:
        return newton_pb(c, rho, series, m, a, target, s1, s5, x0, lo, hi, tol, max_iter)
    return lo if g_lo >= 0 else hi


cdef double m_update(Coef* c, double rho, bint series, double p, double a, double cc,
                     double s1, double s2, double x0, double tol, int max_iter) noexcept nogil:
    cdef double g_c, g_lo, g_hi, h, width, lo, hi
    cdef bint bad_lo, bad_hi
    cdef int it
    m_grad(c, rho, series, p, a, cc, s1, s2, cc, &g_c, &h)
    width = fabs(g_c) / s2 + 1e-9 * (1.0 + fabs(cc))
    if g_c > 0:
        lo = cc - width
        hi = cc
    else:
        lo = cc
        hi = cc + width
    for it in range(60):
        m_grad(c, rho, series, p, a, cc, s1, s2, lo, &g_lo, &h)
        m_grad(c, rho, series, p, a, cc, s1, s2, hi, &g_hi, &h)
        bad_lo = g_lo > 0
        bad_hi = g_hi < 0
        if not (bad_lo or bad_hi):
            break
        width = 2.0 * width
        if bad_lo:
            lo = lo - width
        if bad_hi:
            hi = hi + width
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    return newton_m(c, rho, series, p, a, cc, s1, s2, x0, lo, hi, tol, max_iter)


# --------------------------------------------------------------------------
# tridiagonal Cholesky for (a D^T D + b delta^2 P)


cdef void tri_factor(int N, double a, double b, double delta, bint inclusive,
                     double* L, double* sub) noexcept nogil:
    cdef int i
    cdef double di
    for i in range(N):
        di = a if i == N - 1 else 2.0 * a
        if inclusive or i < N - 1:
            di = di + b * delta * delta
        if i == 0:
            L[0] = sqrt(di)
            sub[0] = 0.0
        else:
            sub[i] = -a / L[i - 1]
            L[i] = sqrt(di - sub[i] * sub[i])


cdef void tri_solve(int N, double* L, double* sub, double* r, double* x, double* w) noexcept nogil:
    """x = D (M^-1 (D^T r)); ``w`` is scratch."""
    cdef int i
    for i in range(N):
        w[i] = r[i] - r[i + 1] if i < N - 1 else r[i]
    # forward: L y = rhs
    w[0] = w[0] / L[0]
    for i in range(1, N):
        w[i] = (w[i] - sub[i] * w[i - 1]) / L[i]
    # backward: L^T v = y
    w[N - 1] = w[N - 1] / L[N - 1]
    for i in range(N - 2, -1, -1):
        w[i] = (w[i] - sub[i + 1] * w[i + 1]) / L[i]
    x[0] = w[0]
    for i in range(1, N):
        x[i] = w[i] - w[i - 1]


# --------------------------------------------------------------------------


def run(problem, state, opts):
    """Iterate to convergence or the iteration limit, updating ``state`` in place.

    Returns ``(status, (r_norm, s_norm, eps_primal, eps_dual), trace)``.
    """
    cdef Py_ssize_t N = problem.N
    cdef int n = <int>N
    sd = problem.steps
    cdef double rho = sd.rho
    cdef bint series = sd.series
    cdef double d = problem.delta
    cdef double m0 = problem.m0
    cdef double E0 = problem.E0
    cdef double elo = problem.soc_bounds[0]
    cdef double ehi = problem.soc_bounds[1]

    cdef double[:, ::1] coef = np.ascontiguousarray(np.column_stack(sd[:12]), dtype=np.float64)
    cdef double[::1] phi_lo = np.array(problem.phi_lo, dtype=np.float64)
    cdef double[::1] phi_hi = np.array(problem.phi_hi, dtype=np.float64)
    cdef double[::1] pb_lo = np.array(problem.pb_lo, dtype=np.float64)
    cdef double[::1] pb_hi = np.array(problem.pb_hi, dtype=np.float64)

    chi_a = np.ascontiguousarray(state.chi, dtype=np.float64).copy()
    xi_a = np.ascontiguousarray(state.xi, dtype=np.float64).copy()
    zeta_a = np.ascontiguousarray(state.zeta, dtype=np.float64).copy()
    E_a = np.ascontiguousarray(state.E, dtype=np.float64).copy()
    phi_a = np.ascontiguousarray(state.phi, dtype=np.float64).copy()
    m_a = np.ascontiguousarray(state.m, dtype=np.float64).copy()
    pb_a = np.ascontiguousarray(state.p_b, dtype=np.float64).copy()
    lam_a = np.ascontiguousarray(state.lam, dtype=np.float64).copy()
    sig_a = np.ascontiguousarray(state.sigma, dtype=np.float64).copy()
    f_a = np.ascontiguousarray(state.f, dtype=np.float64).copy()
    cdef double[::1] chi = chi_a, xi = xi_a, zeta = zeta_a, E = E_a, phi = phi_a
    cdef double[::1] m = m_a, pb = pb_a, f = f_a, sig = sig_a
    cdef double[:, ::1] lam = lam_a

    cdef double eps_rel = opts.eps_rel, eps_abs = opts.eps_abs
    cdef long F_sigma = opts.F_sigma, max_iter = opts.max_iter
    cdef double mu = opts.mu, tau_max = opts.tau_max
    cdef double tol = opts.newton_tol
    cdef int newton_iter = opts.newton_iter
    cdef bint keep_trace = opts.trace
    cdef double gate = opts.gate

    work = np.zeros((16, N + 1))
    cdef double[:, ::1] W = work
    cdef double* rhs = &W[0, 0]
    cdef double* scratch = &W[1, 0]
    cdef double* Lx = &W[2, 0]
    cdef double* Sx = &W[3, 0]
    cdef double* Lz = &W[4, 0]
    cdef double* Sz = &W[5, 0]
    cdef double* chi_p = &W[6, 0]
    cdef double* xi_p = &W[7, 0]
    cdef double* zeta_p = &W[8, 0]
    cdef double* psi_xi = &W[9, 0]
    cdef double* psi_z = &W[10, 0]
    cdef double* avec = &W[11, 0]
    cdef double* tmp = &W[12, 0]
    cdef double* bdx2 = &W[13, 0]

    trace_cap = max_iter + 2 if keep_trace else 1
    trace_a = np.zeros((trace_cap, 9))
    cdef double[:, ::1] T = trace_a

    cdef long j = state.j
    cdef long j0 = j
    cdef Py_ssize_t i
    cdef int k
    cdef Coef* cf
    cdef Fval fv
    cdef double s1, s2, s3, s4, s5, acc, v, g_, lo_i, hi_i
    cdef double rb[5]
    cdef double r_norm, s_norm, bz2, bx2, c_norm, dual2, eps_p, eps_d, pscale, dscale, sm, sp
    cdef double rel_p, rel_d, Gam, tau, obj, bdx1
    cdef double new_sig[5]
    cdef bint changed
    cdef double fx_a = -1.0, fx_b = -1.0, fz_a = -1.0, fz_b = -1.0
    cdef int status = 0  # 0 continue, 1 converged, 2 iteration limit

    with nogil:
        while True:
            s1 = sig[0]; s2 = sig[1]; s3 = sig[2]; s4 = sig[3]; s5 = sig[4]
            if fx_a != s1 + s4 or fx_b != s2:
                fx_a = s1 + s4; fx_b = s2
                tri_factor(n, fx_a, fx_b, d, False, Lx, Sx)
            if fz_a != s5 or fz_b != s3:
                fz_a = s5; fz_b = s3
                tri_factor(n, fz_a, fz_b, d, True, Lz, Sz)
            for i in range(N):
                chi_p[i] = chi[i]; xi_p[i] = xi[i]; zeta_p[i] = zeta[i]

            # chi
            for i in range(N):
                v = xi[i] - f[i] - lam[0, i]
                chi[i] = v if v > 0.0 else 0.0
            # xi: rhs = -d + s1 (chi + f + l1) - s2 Psi^T (m - m0 + l2) + s4 (phi - l4)
            for i in range(N):
                tmp[i] = m[i] - m0 + lam[1, i]
            acc = 0.0
            for i in range(N - 1, -1, -1):
                acc = acc + tmp[i]
                scratch[i] = d * (acc - tmp[i])
            for i in range(N):
                rhs[i] = -d + s1 * (chi[i] + f[i] + lam[0, i]) - s2 * scratch[i] + s4 * (phi[i] - lam[3, i])
            tri_solve(n, Lx, Sx, rhs, &xi[0], scratch)
            # zeta: rhs = -s3 PsiE^T (E - E0 + l3) + s5 (pb - l5)
            for i in range(N):
                tmp[i] = E[i] - E0 + lam[2, i]
            acc = 0.0
            for i in range(N - 1, -1, -1):
                acc = acc + tmp[i]
                scratch[i] = d * acc
            for i in range(N):
                rhs[i] = -s3 * scratch[i] + s5 * (pb[i] - lam[4, i])
            tri_solve(n, Lz, Sz, rhs, &zeta[0], scratch)
            # E
            acc = 0.0
            for i in range(N):
                acc = acc + zeta[i]
                psi_z[i] = d * acc
                v = E0 - psi_z[i] - lam[2, i]
                if v < elo:
                    v = elo
                if v > ehi:
                    v = ehi
                E[i] = v
            # p_b
            for i in range(N):
                avec[i] = chi[i] - xi[i] + lam[0, i]
                cf = <Coef*>&coef[i, 0]
                pb[i] = pb_update(cf, rho, series, m[i], avec[i], zeta[i], lam[4, i], s1, s5,
                                  pb_lo[i], pb_hi[i], pb[i], tol, newton_iter)
            # phi
            for i in range(N):
                v = xi[i] + lam[3, i]
                if v < phi_lo[i]:
                    v = phi_lo[i]
                if v > phi_hi[i]:
                    v = phi_hi[i]
                phi[i] = v
            # m
            acc = 0.0
            for i in range(N):
                acc = acc + xi[i]
                psi_xi[i] = d * (acc - xi[i])
            for i in range(N):
                cf = <Coef*>&coef[i, 0]
                m[i] = m_update(cf, rho, series, pb[i], avec[i], m0 - psi_xi[i] - lam[1, i],
                                s1, s2, m[i], tol, newton_iter)
            # f at the new z and multipliers
            for i in range(N):
                cf = <Coef*>&coef[i, 0]
                fphi_eval(cf, rho, series, m[i], pb[i], 1, &fv)
                f[i] = fv.f
                lam[0, i] = lam[0, i] + chi[i] - xi[i] + fv.f
                lam[1, i] = lam[1, i] + m[i] - m0 + psi_xi[i]
                lam[2, i] = lam[2, i] + E[i] - E0 + psi_z[i]
                lam[3, i] = lam[3, i] + xi[i] - phi[i]
                lam[4, i] = lam[4, i] + zeta[i] - pb[i]
            j += 1

            # residuals
            for k in range(5):
                rb[k] = 0.0
            bz2 = 0.0; bx2 = 0.0; s_norm = 0.0; dual2 = 0.0
            acc = 0.0
            for i in range(N):
                acc = acc + (xi_p[i] - xi[i])
                bdx2[i] = d * (acc - (xi_p[i] - xi[i]))
            for i in range(N):
                cf = <Coef*>&coef[i, 0]
                fphi_eval(cf, rho, series, m[i], pb[i], 1, &fv)
                v = f[i] + (chi[i] - xi[i]); rb[0] += v * v
                v = (m[i] + psi_xi[i]) - m0; rb[1] += v * v
                v = (0.0 + (E[i] + psi_z[i])) - E0; rb[2] += v * v
                v = xi[i] - phi[i]; rb[3] += v * v
                v = -pb[i] + zeta[i]; rb[4] += v * v
                bz2 += f[i] * f[i] + m[i] * m[i] + pb[i] * pb[i]
                v = chi[i] - xi[i]; bx2 += v * v
                bx2 += psi_xi[i] * psi_xi[i]
                v = E[i] + psi_z[i]; bx2 += v * v
                v = xi[i] - phi[i]; bx2 += v * v
                bx2 += zeta[i] * zeta[i]
                bdx1 = (chi_p[i] - chi[i]) - (xi_p[i] - xi[i])
                sm = fv.fm * s1 * bdx1 + s2 * bdx2[i]
                sp = fv.fp * s1 * bdx1 - s5 * (zeta_p[i] - zeta[i])
                s_norm += sm * sm + sp * sp
                v = fv.fm * lam[0, i] + lam[1, i]; dual2 += v * v
                v = fv.fp * lam[0, i] - lam[4, i]; dual2 += v * v
            r_norm = 0.0
            for k in range(5):
                r_norm += rb[k]
                rb[k] = sqrt(rb[k])
            r_norm = sqrt(r_norm)
            s_norm = sqrt(s_norm)
            c_norm = sqrt(N * (m0 * m0 + E0 * E0))
            pscale = sqrt(bz2)
            if sqrt(bx2) > pscale:
                pscale = sqrt(bx2)
            if c_norm > pscale:
                pscale = c_norm
            dscale = sqrt(dual2)
            eps_p = sqrt(5.0 * N) * eps_abs + eps_rel * pscale
            eps_d = sqrt(2.0 * N) * eps_abs + eps_rel * dscale

            # penalties
            if j % F_sigma == 0:
                rel_p = r_norm / pscale if pscale > 0 else INFINITY
                rel_d = s_norm / dscale if dscale > 0 else INFINITY
                if (rel_p if rel_p > rel_d else rel_d) > gate:
                    Gam = sqrt(r_norm / s_norm) if s_norm > 0 else INFINITY
                    if 1.0 <= Gam and Gam < tau_max:
                        tau = Gam
                    elif 1.0 / tau_max < Gam and Gam < 1.0:
                        tau = 1.0 / Gam
                    else:
                        tau = tau_max
                    changed = False
                    for k in range(5):
                        new_sig[k] = sig[k]
                        if rb[k] > mu * s_norm:
                            new_sig[k] = sig[k] * tau
                        elif s_norm > mu * rb[k]:
                            new_sig[k] = sig[k] / tau
                        if new_sig[k] != sig[k]:
                            changed = True
                    if changed:
                        for k in range(5):
                            for i in range(N):
                                lam[k, i] = lam[k, i] * (sig[k] / new_sig[k])
                            sig[k] = new_sig[k]

            if keep_trace:
                obj = 0.0
                for i in range(N):
                    obj += phi[i]
                T[j - j0 - 1, 0] = j
                T[j - j0 - 1, 1] = r_norm
                T[j - j0 - 1, 2] = s_norm
                for k in range(5):
                    T[j - j0 - 1, 3 + k] = sig[k]
                T[j - j0 - 1, 8] = obj * d

            if r_norm <= eps_p and s_norm <= eps_d:
                status = 1
                break
            if j > max_iter:
                status = 2
                break

    state.chi, state.xi, state.zeta, state.E, state.phi = chi_a, xi_a, zeta_a, E_a, phi_a
    state.m, state.p_b, state.lam, state.sigma, state.f = m_a, pb_a, lam_a, sig_a, f_a
    state.j = j
    state._xi_solver = None
    state._zeta_solver = None
    name = "converged" if status == 1 else "iteration_limit"
    return name, (r_norm, s_norm, eps_p, eps_d), trace_a[: j - j0] if keep_trace else None


# --------------------------------------------------------------------------
# thin wrappers used by the test-suite to compare against the numpy code


def fphi_scalar(coef_row, double rho, bint series, double m, double p):
    cdef double[::1] c = np.ascontiguousarray(coef_row, dtype=np.float64)
    cdef Fval fv
    fphi_eval(<Coef*>&c[0], rho, series, m, p, 2, &fv)
    return fv.f, fv.fm, fv.fp, fv.fmm, fv.fpp


def pb_update_scalar(coef_row, double rho, bint series, double m, double a, double zeta, double l5,
                     double s1, double s5, double lo, double hi, double x0, double tol, int max_iter):
    cdef double[::1] c = np.ascontiguousarray(coef_row, dtype=np.float64)
    return pb_update(<Coef*>&c[0], rho, series, m, a, zeta, l5, s1, s5, lo, hi, x0, tol, max_iter)


def m_update_scalar(coef_row, double rho, bint series, double p, double a, double cc,
                    double s1, double s2, double x0, double tol, int max_iter):
    cdef double[::1] c = np.ascontiguousarray(coef_row, dtype=np.float64)
    return m_update(<Coef*>&c[0], rho, series, p, a, cc, s1, s2, x0, tol, max_iter)


def gram_solve(double delta, double a, double b, bint inclusive, r):
    cdef double[::1] rv = np.array(r, dtype=np.float64)
    cdef int n = rv.shape[0]
    out = np.zeros(n)
    work = np.zeros((3, n + 1))
    cdef double[::1] x = out
    cdef double[:, ::1] W = work
    tri_factor(n, a, b, delta, inclusive, &W[0, 0], &W[1, 0])
    tri_solve(n, &W[0, 0], &W[1, 0], &rv[0], &x[0], &W[2, 0])
    return out
