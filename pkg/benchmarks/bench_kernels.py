"""Compare the compiled ADMM loop with the numpy fallback.

Both backends run the same fixed number of sweeps (the tolerance is set out
of reach) on the default mission at several horizon lengths, so the timing
measures the per-iteration cost only.

    python benchmarks/bench_kernels.py --sizes 60 240 960 --iters 200
"""

import argparse
import csv
import statistics
import sys
import time

from hybridmpc import admm
from hybridmpc.admm import SolverOptions
from hybridmpc.convex import assemble
from hybridmpc.models import PowertrainParams
from hybridmpc.schedule import Tables, build_schedule, mission_profile


def problem(n, topology):
    params = PowertrainParams(topology=topology)
    sched = build_schedule(mission_profile(params.mission_time / n), Tables(), params, params.mtow)
    return assemble(sched, params.mtow, params.soc_range[1], params)


def time_backend(pr, backend, iters, reps):
    opts = SolverOptions(eps_rel=1e-300, max_iter=iters, trace=False, backend=backend)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        sol = admm.solve(pr, opts, fast_path=False)
        times.append(time.perf_counter() - t0)
    return statistics.median(times) / sol.stats.iterations


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[60, 240, 960])
    ap.add_argument("--iters", type=int, default=200, help="sweeps per timed solve")
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--topology", choices=("parallel", "series"), default="parallel")
    ap.add_argument("--csv", help="also write the table to this file")
    args = ap.parse_args(argv)

    backends = admm.available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; only the numpy fallback is available", file=sys.stderr)
    rows = []
    for n in args.sizes:
        pr = problem(n, args.topology)
        per_iter = {b: time_backend(pr, b, args.iters, args.reps) for b in backends}
        speedup = per_iter["python"] / per_iter["cython"] if "cython" in per_iter else float("nan")
        rows.append([n] + [per_iter.get(b, float("nan")) * 1e6 for b in ("python", "cython")] + [speedup])

    header = ["N", "numpy_us_per_iter", "cython_us_per_iter", "speedup"]
    print(f"{header[0]:>6} {header[1]:>18} {header[2]:>19} {header[3]:>8}")
    for n, py, cy, sp in rows:
        print(f"{n:>6} {py:>18.1f} {cy:>19.1f} {sp:>8.1f}")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)


if __name__ == "__main__":
    main()
