import os
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def test_benchmark_runs(tmp_path):
    out = tmp_path / "bench.csv"
    proc = subprocess.run(
        [sys.executable, str(ROOT / "benchmarks" / "bench_kernels.py"),
         "--sizes", "12", "--iters", "5", "--reps", "1", "--csv", str(out)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.read_text().splitlines()[0] == "N,numpy_us_per_iter,cython_us_per_iter,speedup"


def test_backend_forced_by_environment():
    env = dict(os.environ, HYBRIDMPC_BACKEND="python")
    proc = subprocess.run([sys.executable, "-c", "from hybridmpc import admm; print(admm.BACKEND)"],
                          capture_output=True, text=True, env=env, check=True)
    assert proc.stdout.strip() == "python"
