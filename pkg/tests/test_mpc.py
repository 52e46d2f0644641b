import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridmpc.models import PowertrainParams, Topology, quad_map_eval
from hybridmpc.mpc import (
    COMPONENTS,
    MissionError,
    Scenario,
    Strategy,
    apply_windmilling,
    compare_strategies,
    decompose_powers,
    mission_columns,
    read_mission_csv,
    run_closed_loop,
    summary_text,
    write_mission_csv,
    write_timing_csv,
)
from hybridmpc.schedule import Tables, build_schedule, mission_profile, windmill_profile

COARSE = 120.0


@pytest.fixture(scope="module", params=["parallel", "series"])
def flown(request):
    sc = Scenario(params=PowertrainParams(topology=request.param), delta=COARSE)
    return {s: run_closed_loop(sc.with_(strategy=s), trace_steps="none") for s in Strategy}


def test_strategy_parse():
    assert Strategy.parse("cdcs") is Strategy.CDCS
    assert Strategy.parse("Admm-Variable-Mass") is Strategy.VARIABLE_MASS
    with pytest.raises(ValueError):
        Strategy.parse("greedy")


@pytest.mark.parametrize("changes", [
    {"delta": 0.0},
    {"windmilling": 0.0},
    {"windmilling": 1.5},
    {"gt_power_cap_override": 6.0},
])
def test_scenario_validation(changes):
    with pytest.raises(ValueError):
        Scenario(**changes)


def test_plant_invariants(flown):
    for res in flown.values():
        assert res.n_steps == round(3600.0 / COARSE)
        np.testing.assert_allclose(np.diff(res.m), -res.n_systems * res.delta * res.phi, rtol=1e-12)
        np.testing.assert_allclose(np.diff(res.E), -res.delta * res.p_b, rtol=1e-12, atol=1e-9)
        lo, hi = PowertrainParams().soc_range
        assert res.E.min() >= lo - 1e-9 and res.E.max() <= hi + 1e-9
        assert res.m[0] - res.m[-1] == pytest.approx(res.fuel, rel=1e-12)


def test_power_balance(flown):
    for res in flown.values():
        c = res.components
        assert c["p_gt"].min() >= -1e-9
        if res.topology is Topology.PARALLEL:
            np.testing.assert_allclose(c["p_gt"] + c["p_em"], res.p_drv, rtol=1e-12, atol=1e-12)
        else:
            np.testing.assert_allclose(c["p_gen"] + c["p_c"], c["p_el"], rtol=1e-12, atol=1e-12)
            assert np.all(c["p_gt"] >= c["p_gen"] - 1e-12)


def test_strategy_ordering(flown):
    fuel = {s: r.fuel for s, r in flown.items()}
    assert fuel[Strategy.VARIABLE_MASS] <= fuel[Strategy.CONSTANT_MASS] * (1 + 1e-6)
    assert fuel[Strategy.CONSTANT_MASS] <= fuel[Strategy.CDCS]
    assert fuel[Strategy.CDCS] < fuel[Strategy.GAS_TURBINE_ONLY]


def test_gt_only_leaves_battery_alone(flown):
    res = flown[Strategy.GAS_TURBINE_ONLY]
    if res.topology is Topology.PARALLEL:
        np.testing.assert_array_equal(res.p_b, 0.0)
    assert all(s.status == "heuristic" for s in res.stats)


def test_cdcs_depletes_then_sustains(flown):
    res = flown[Strategy.CDCS]
    lo, _ = PowertrainParams().soc_range
    floor = int(np.argmax(res.E <= lo + 1e-9))
    assert floor > 0
    assert np.all(res.p_b[:floor - 1] > 0)
    np.testing.assert_allclose(res.p_b[floor:], 0.0)


def test_admm_stats_recorded(flown):
    res = flown[Strategy.VARIABLE_MASS]
    assert len(res.stats) == res.n_steps
    assert all(s.status in ("converged", "trivial") for s in res.stats)
    assert res.iterations.sum() > 0


@settings(max_examples=100, deadline=None)
@given(i=st.integers(0, 59), frac=st.floats(0.0, 1.0), topology=st.sampled_from(["parallel", "series"]))
def test_decompose_balance(i, frac, topology):
    sched = SCHEDULES[topology]
    p_b = sched.pb_lo[i] + frac * (sched.pb_hi[i] - sched.pb_lo[i])
    p_drv = float(sched.p_drv_estimate[i])
    parts = decompose_powers(p_b, p_drv, sched, i)
    assert set(parts) == set(COMPONENTS[Topology.parse(topology)])
    p_c = p_b - sched.bus_loss * p_b * p_b
    if topology == "parallel":
        assert parts["p_gt"] + parts["p_em"] == pytest.approx(p_drv, abs=1e-12)
        assert quad_map_eval(sched.kappa_map(i), parts["p_em"]) == pytest.approx(p_c, abs=1e-9)
    else:
        assert parts["p_c"] == pytest.approx(p_c, abs=1e-12)
        assert parts["p_gen"] + parts["p_c"] == pytest.approx(parts["p_el"], abs=1e-12)


_P = PowertrainParams()
SCHEDULES = {
    t: build_schedule(mission_profile(60.0), Tables(), _P, _P.mtow, topology=t) for t in ("parallel", "series")
}


def test_windmilling_pins_descent(params):
    sched = build_schedule(windmill_profile(), Tables(), params, params.mtow)
    pinned = apply_windmilling(sched, 0.15, params)
    neg = sched.p_drv_estimate < 0
    assert np.any(neg)
    np.testing.assert_array_equal(pinned.pb_lo[neg], pinned.pb_hi[neg])
    assert np.all(pinned.pb_hi[neg] < 0)
    np.testing.assert_array_equal(pinned.pb_hi[~neg], sched.pb_hi[~neg])
    with pytest.raises(ValueError):
        apply_windmilling(sched, 0.0, params)


def test_windmilling_recharges(params):
    sc = Scenario(profile=windmill_profile(), windmilling=0.15)
    res = run_closed_loop(sc, trace_steps="none")
    neg = res.p_drv < 0
    assert np.any(neg)
    steps = np.nonzero(neg)[0]
    assert np.all(np.diff(res.E)[steps] > 0)


def test_turbine_cap_respected():
    sc = Scenario(profile=windmill_profile(), gt_power_cap_override=3.0, delta=60.0)
    res = run_closed_loop(sc, trace_steps="none")
    assert res.components["p_gt"].max() <= 3.0 + 1e-9


def test_trace_selection():
    sc = Scenario(delta=600.0)
    first = run_closed_loop(sc, trace_steps="first")
    assert first.stats[0].trace is not None
    assert all(s.trace is None for s in first.stats[1:])
    with pytest.raises(ValueError):
        run_closed_loop(sc, trace_steps="some")


def test_mission_error_carries_step():
    err = MissionError(7, "bad step")
    assert err.step == 7


def test_compare_records_baseline():
    res = compare_strategies(Scenario(delta=600.0), ["cdcs", "GasTurbineOnly"])
    assert res[0].baselines == res[1].baselines == {"Cdcs": res[0].fuel}
    text = summary_text(res)
    assert "Cdcs" in text and "savings_%" in text


def test_mission_csv_round_trip(tmp_path, flown):
    res = flown[Strategy.VARIABLE_MASS]
    path = tmp_path / "mission.csv"
    write_mission_csv(path, res)
    back = read_mission_csv(path)
    assert tuple(back) == mission_columns(res.topology)
    np.testing.assert_array_equal(back["p_b"], res.p_b)
    np.testing.assert_array_equal(back["E_end"], res.E[1:])
    np.testing.assert_array_equal(back["iterations"], res.iterations)
    write_timing_csv(tmp_path / "timing.csv", res)
    assert (tmp_path / "timing.csv").read_text().startswith("step,backend,wall_time_s")
