"""Top-level solve with the trivial fast path and trace export."""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from ..convex import ConvexProblem, Solution, SolverStats, trivial_solution
from .solver import SolverOptions, init_state

TRACE_COLUMNS = ("iteration", "r_norm", "s_norm", "sigma1", "sigma2", "sigma3", "sigma4", "sigma5", "objective")


def solve(problem: ConvexProblem, opts: SolverOptions = SolverOptions(), *, fast_path: bool = True) -> Solution:
    """Solve the convex program; hitting the iteration limit is reported in
    ``stats.status`` together with the last iterate."""
    from . import kernel

    t0 = time.perf_counter()
    if fast_path:
        sol = trivial_solution(problem)
        if sol is not None:
            sol.stats.wall_time = time.perf_counter() - t0
            sol.stats.backend = "trivial"
            return sol
    name, mod = kernel(opts.backend)
    state = init_state(problem, opts)
    status, (r, s, eps_p, eps_d), trace = mod.run(problem, state, opts)
    stats = SolverStats(
        iterations=int(state.j), primal_residual=float(r), dual_residual=float(s),
        eps_primal=float(eps_p), eps_dual=float(eps_d), wall_time=time.perf_counter() - t0,
        status=status, backend=name,
        trace={"columns": TRACE_COLUMNS, "rows": trace} if trace is not None else None,
    )
    return problem.make_solution(np.clip(state.phi, problem.phi_lo, problem.phi_hi),
                                 np.clip(state.p_b, problem.pb_lo, problem.pb_hi), stats)


def write_trace(path, stats: SolverStats, *, step_index: int | None = None, append: bool = False) -> None:
    """CSV trace: one row per iteration (optionally tagged with an MPC step)."""
    if stats.trace is None or stats.trace["rows"] is None:
        rows = np.zeros((0, len(TRACE_COLUMNS)))
    else:
        rows = stats.trace["rows"]
    path = Path(path)
    new_file = not (append and path.exists())
    with path.open("a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        cols = list(TRACE_COLUMNS)
        if step_index is not None:
            cols = ["step"] + cols
        if new_file:
            w.writerow(cols)
        for row in rows:
            vals = [int(row[0])] + [repr(float(v)) for v in row[1:]]
            if step_index is not None:
                vals = [step_index] + vals
            w.writerow(vals)
