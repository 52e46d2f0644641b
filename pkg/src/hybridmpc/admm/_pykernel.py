"""Numpy iteration loop built from the single-step functions."""

from __future__ import annotations

import numpy as np

from .solver import CONTINUE, check_stop, residuals, step, update_penalties


def run(problem, state, opts):
    """Same contract as the compiled ``run``: iterate, then write the final
    iterate back into ``state``."""
    rows = []
    cur = state
    while True:
        new = step(cur, problem, opts)
        res = residuals(cur, new, problem, opts)
        new = update_penalties(new, res, opts)
        status = check_stop(res, new, opts)
        if opts.trace:
            rows.append((new.j, res.r_norm, res.s_norm, *new.sigma, float(np.sum(new.phi) * problem.delta)))
        cur = new
        if status != CONTINUE:
            break
    for name in ("chi", "xi", "zeta", "E", "phi", "m", "p_b", "lam", "sigma", "f", "j"):
        setattr(state, name, getattr(cur, name))
    state._xi_solver, state._zeta_solver = cur._xi_solver, cur._zeta_solver
    trace = np.array(rows, dtype=float).reshape(-1, 9) if opts.trace else None
    return status, (res.r_norm, res.s_norm, res.eps_primal, res.eps_dual), trace
