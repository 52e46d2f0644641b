import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from hybridmpc import cli
from hybridmpc.mpc import InvariantError, MissionError, read_mission_csv
from hybridmpc.schedule import data_path


def write_scenario(tmp_path, **edits):
    """Copy of the bundled scenario with absolute data paths and a coarse step."""
    doc = yaml.safe_load(data_path("default_scenario.yaml").read_text())
    doc["mission"]["delta"] = 300.0
    doc["mission"]["profile"] = str(data_path("default_profile.csv"))
    for key in ("motor", "generator", "fan_map"):
        doc["tables"][key] = str(data_path(doc["tables"][key]))
    for dotted, value in edits.items():
        node = doc
        *head, last = dotted.split(".")
        for k in head:
            node = node[k]
        node[last] = value
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def run_main(argv, capsys):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr()


def error_payload(err):
    return json.loads(err.strip().splitlines()[-1])


def test_validate_bundled(capsys):
    code, out = run_main(["validate", "default"], capsys)
    assert code == 0 and "ok" in out.out


def test_run_writes_outputs(tmp_path, capsys):
    sc = write_scenario(tmp_path)
    out = tmp_path / "out"
    code, _ = run_main(["run", sc, "--out", out], capsys)
    assert code == 0
    for name in ("mission.csv", "timing.csv", "solver_trace.csv", "summary.txt", "power_split.svg", "soc_mass.svg"):
        assert (out / name).is_file(), name
    m = read_mission_csv(out / "mission.csv")
    np.testing.assert_allclose(m["p_gt"] + m["p_em"], m["p_drv"], atol=1e-12)
    assert "savings vs Cdcs" in (out / "summary.txt").read_text()
    trace = (out / "solver_trace.csv").read_text().splitlines()
    assert trace[0].startswith("step,iteration") and len(trace) > 1


def test_run_is_reproducible(tmp_path, capsys):
    sc = write_scenario(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_main(["run", sc, "--out", a, "--topology", "series"], capsys)[0] == 0
    assert run_main(["run", sc, "--out", b, "--topology", "series"], capsys)[0] == 0
    for name in ("mission.csv", "solver_trace.csv", "power_split.svg", "soc_mass.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert "p_gen" in (a / "mission.csv").read_text().splitlines()[0]


def test_compare(tmp_path, capsys):
    sc = write_scenario(tmp_path)
    out = tmp_path / "cmp"
    code, res = run_main(["compare", sc, "Cdcs", "AdmmVariableMass", "--out", out], capsys)
    assert code == 0
    rows = (out / "compare.csv").read_text().splitlines()
    assert rows[0] == "rank,strategy,fuel_kg,savings_pct,final_soc_MJ,iterations"
    assert len(rows) == 3
    assert (out / "mission_2_AdmmVariableMass.csv").is_file()
    assert (out / "battery_overlay.svg").is_file()
    assert "AdmmVariableMass" in res.out


def test_sweep_deterministic_across_jobs(tmp_path, capsys):
    sc = write_scenario(tmp_path)
    a, b = tmp_path / "s1", tmp_path / "s2"
    args = ["sweep", sc, "R", "0.03", "0.05", "--random", "2", "--seed", "7"]
    assert run_main(args + ["--out", a], capsys)[0] == 0
    assert run_main(args + ["--out", b, "--jobs", "2"], capsys)[0] == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    rows = (a / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3
    assert (a / "sweep.svg").is_file()


def test_sweep_values_seeded():
    assert cli.sweep_values([1.0, 2.0], 3, seed=5) == cli.sweep_values([2.0, 1.0], 3, seed=5)
    assert cli.sweep_values([3.0, 1.0]) == [1.0, 3.0]
    with pytest.raises(cli.UsageError):
        cli.sweep_values([1.0], 2)


@pytest.mark.parametrize("axis,value,check", [
    ("battery_mass", 16000.0, lambda s: s.params.soc_range == (700.0, 2974.0)),
    ("N", 30, lambda s: s.delta == 120.0),
    ("beta1_scale", 2.0, lambda s: s.params.fuel_map[1] == pytest.approx(0.1642)),
    ("F_sigma", 50.0, lambda s: s.solver.F_sigma == 50),
    ("max_tas", 200.0, lambda s: s.flight_profile().v.max() == pytest.approx(200.0)),
])
def test_apply_axis(axis, value, check):
    sc = cli.load_scenario(cli.default_scenario_path())
    assert check(cli.apply_axis(sc, axis, value))


def test_schema_violation_exit_2(tmp_path, capsys):
    sc = write_scenario(tmp_path, **{"params.colour": "red"})
    code, res = run_main(["validate", sc], capsys)
    assert code == 2
    assert error_payload(res.err)["kind"] == "config"


def test_wrong_schema_version(tmp_path, capsys):
    sc = write_scenario(tmp_path, **{"schema-version": 2})
    assert run_main(["run", sc], capsys)[0] == 2


def test_missing_loss_table_exit_2(tmp_path, capsys):
    sc = write_scenario(tmp_path, **{"tables.motor": str(tmp_path / "nope.csv")})
    code, res = run_main(["run", sc, "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert "not found" in error_payload(res.err)["message"]


def test_bad_yaml_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("params: [unclosed\n")
    assert run_main(["validate", path], capsys)[0] == 2


def test_single_strategy_compare_exit_2(tmp_path, capsys):
    sc = write_scenario(tmp_path)
    assert run_main(["compare", sc, "Cdcs", "--out", tmp_path / "o"], capsys)[0] == 2


def test_unknown_strategy_exit_2(tmp_path, capsys):
    sc = write_scenario(tmp_path)
    assert run_main(["run", sc, "--strategy", "greedy", "--out", tmp_path / "o"], capsys)[0] == 2


def test_invalid_parameter_exit_2(tmp_path, capsys):
    sc = write_scenario(tmp_path, **{"solver.eps_rel": 0.0, "solver.eps_abs": 0.0})
    assert run_main(["run", sc, "--out", tmp_path / "o"], capsys)[0] == 2


def test_invariant_violation_exit_4(tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise InvariantError("SOC left its bounds")

    monkeypatch.setattr(cli, "run_closed_loop", broken)
    code, res = run_main(["run", write_scenario(tmp_path), "--out", tmp_path / "o"], capsys)
    assert code == 4
    assert error_payload(res.err)["kind"] == "invariant"


def test_solver_failure_exit_3(tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise MissionError(5, "solver returned non-finite battery power")

    monkeypatch.setattr(cli, "run_closed_loop", broken)
    code, res = run_main(["run", write_scenario(tmp_path), "--out", tmp_path / "o"], capsys)
    assert code == 3
    assert error_payload(res.err)["step"] == 5


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hybridmpc.cli", "validate", "default"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
