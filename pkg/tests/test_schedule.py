import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridmpc.models import Topology, battery_chemical_power, drive_power_coefficients
from hybridmpc.schedule import (
    CoverageError,
    FanMapTable,
    FlightProfile,
    LossTable,
    ProfileError,
    Tables,
    build_schedule,
    data_path,
    default_motor_table,
    estimate_drive_power_profile,
    load_fan_map,
    load_flight_profile,
    load_loss_table,
    mission_profile,
    path_angles,
    profile_from_arrays,
    shaft_speed,
    windmill_profile,
    write_fan_map,
    write_flight_profile,
    write_loss_table,
)


def test_mission_profile_shape():
    prof = mission_profile(60.0)
    assert prof.n_steps == 60
    assert prof.h.max() == pytest.approx(7500.0)
    assert prof.v.max() == pytest.approx(190.0)
    assert prof.h[0] == prof.h[-1] == 0.0


def test_path_angles_reproduce_altitude():
    prof = mission_profile(30.0)
    dh = prof.v[:-1] * prof.delta * np.sin(prof.gamma[:-1])
    np.testing.assert_allclose(np.cumsum(dh), prof.h[1:], atol=1e-9)


def test_path_angle_infeasible_climb():
    with pytest.raises(ProfileError):
        path_angles([0.0, 5000.0], [100.0, 100.0], 10.0)


@pytest.mark.parametrize("t,h,v", [
    ([0.0, 0.0, 60.0], [0.0, 0.0, 100.0], [100.0, 100.0, 100.0]),
    ([0.0, 60.0], [0.0, 100.0], [100.0, -1.0]),
])
def test_bad_profiles_rejected(t, h, v):
    with pytest.raises(ProfileError):
        profile_from_arrays(t, h, v, 60.0)


def test_uneven_knots_rejected():
    with pytest.raises(ProfileError):
        FlightProfile(60.0, [0.0, 60.0, 100.0], [0.0] * 3, [100.0] * 3, [0.0] * 3)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([10.0, 30.0, 60.0, 120.0, 600.0]))
def test_resampling_covers_mission(delta):
    prof = mission_profile(delta)
    assert prof.t[-1] == pytest.approx(3600.0)
    assert prof.n_steps == round(3600.0 / delta)


def test_profile_file_round_trip(tmp_path):
    prof = mission_profile(60.0)
    path = tmp_path / "p.csv"
    write_flight_profile(path, prof)
    back = load_flight_profile(path, 60.0)
    for name in ("t", "h", "v", "gamma"):
        np.testing.assert_array_equal(getattr(back, name), getattr(prof, name))


def test_profile_file_errors(tmp_path):
    with pytest.raises(ProfileError):
        load_flight_profile(tmp_path / "missing.csv", 60.0)
    bad = tmp_path / "bad.csv"
    bad.write_text("t,h\n0,0\n60,10\n")
    with pytest.raises(ProfileError):
        load_flight_profile(bad, 60.0)


def test_profile_tail_and_head():
    prof = mission_profile(60.0)
    assert prof.tail(10).n_steps == 50
    assert prof.tail(10).t[0] == prof.t[10]
    assert prof.head(5).n_steps == 5


def test_bundled_profiles_load():
    prof = load_flight_profile(data_path("default_profile.csv"), 60.0)
    np.testing.assert_allclose(prof.h, mission_profile(60.0).h, atol=1e-9)
    wm = load_flight_profile(data_path("windmill_profile.csv"), 60.0)
    np.testing.assert_allclose(wm.h, windmill_profile(60.0).h, atol=1e-9)


def test_windmill_profile_has_negative_drive(params):
    p = estimate_drive_power_profile(windmill_profile(), params.mtow, params)
    assert p.min() < 0
    assert p.max() > 3.0


def test_synthetic_fan_map_formula():
    fan = FanMapTable.synthetic()
    p = fan.drive_power[7]
    # knot values are exact
    assert fan.lookup(3000.0, p)[0] == pytest.approx(85.0 + 10.0 * math.log(p / 2.0) - 1.5, rel=1e-12)


def test_fan_map_clamps(caplog):
    fan = FanMapTable.synthetic()
    assert fan.lookup(20000.0, 2.0)[0] == pytest.approx(fan.lookup(12000.0, 2.0)[0])
    assert "clamped" in caplog.text


def test_fan_map_round_trip(tmp_path):
    fan = FanMapTable.synthetic(0.6)
    write_fan_map(tmp_path / "fan.csv", fan)
    back = load_fan_map(tmp_path / "fan.csv")
    np.testing.assert_array_equal(back.omega_nd, fan.omega_nd)
    assert back.mach == 0.6


def test_shaft_speed_increases_with_power():
    fan = FanMapTable.synthetic()
    lo = shaft_speed(1.0, 5000.0, 180.0, fan)
    hi = shaft_speed(3.0, 5000.0, 180.0, fan)
    assert 0 < lo < hi


def test_default_motor_efficiency():
    c2, c1, c0 = default_motor_table().coeffs[0]
    p = 2.0
    assert p / (c2 * p * p + c1 * p + c0) == pytest.approx(0.95)


def test_loss_table_interpolation_and_coverage(caplog):
    tab = LossTable(np.array([100.0, 200.0]), np.array([[0.02, 1.0, 0.0], [0.04, 1.1, 0.1]]))
    np.testing.assert_allclose(tab.at(150.0)[0], [0.03, 1.05, 0.05])
    with pytest.raises(CoverageError):
        tab.at(250.0)
    np.testing.assert_allclose(tab.at(250.0, "clamp")[0], tab.coeffs[1])
    assert "clamped" in caplog.text


def test_loss_table_validation(tmp_path):
    with pytest.raises(ValueError):
        LossTable(np.array([1.0, 0.5]), np.ones((2, 3)))
    with pytest.raises(ValueError):
        LossTable.constant(-1.0, 1.0)
    path = tmp_path / "t.csv"
    tab = LossTable(np.array([100.0, 200.0]), np.array([[0.02, 1.0, 0.0], [0.04, 1.1, 0.1]]))
    write_loss_table(path, tab)
    np.testing.assert_array_equal(load_loss_table(path).coeffs, tab.coeffs)
    path.write_text("w,a,b,c\n1,0,1,0\n")
    with pytest.raises(ValueError):
        load_loss_table(path)


def test_speed_dependent_table_coverage_error(params):
    narrow = LossTable(np.array([10.0, 20.0]), np.array([[0.02, 1.0, 0.0], [0.03, 1.0, 0.0]]))
    with pytest.raises(CoverageError):
        build_schedule(mission_profile(60.0), Tables(motor=narrow), params, params.mtow)
    sched = build_schedule(mission_profile(60.0), Tables(motor=narrow, extrapolate="clamp"), params, params.mtow)
    np.testing.assert_allclose(sched.kappa[:, 0], 0.03)


def test_schedule_eta_is_per_system(params):
    prof = mission_profile(60.0)
    sched = build_schedule(prof, Tables(), params, params.mtow)
    i = 20
    e = drive_power_coefficients(prof.v[i], prof.v[i + 1], prof.gamma[i], prof.gamma[i + 1], 60.0, params)
    m = 38000.0
    whole = (e.eta2 * m + e.eta1) * m + e.eta0
    c2, c1, c0 = sched.eta[i]
    ms = m / 4
    assert (c2 * ms + c1) * ms + c0 == pytest.approx(whole / 4, rel=1e-12)


def test_parallel_bounds(params):
    sched = build_schedule(mission_profile(60.0), Tables(), params, params.mtow)
    c2, c1, c0 = default_motor_table().coeffs[0]
    em_hi = params.em_power_range[1]
    expected = battery_chemical_power(c2 * em_hi**2 + c1 * em_hi + c0, params)
    np.testing.assert_allclose(sched.pb_hi, expected)
    np.testing.assert_allclose(sched.pb_lo, 0.0)
    b2, b1, b0 = params.fuel_map
    np.testing.assert_allclose(sched.phi_lo, b0)
    np.testing.assert_allclose(sched.phi_hi, b1 * 5.0 + b0)


def test_series_bounds_allow_charging(params):
    sched = build_schedule(mission_profile(60.0), Tables(), params, params.mtow, topology="series")
    assert sched.topology is Topology.SERIES
    assert np.all(sched.pb_lo < 0)
    assert np.all(sched.pb_hi <= params.max_chemical_power + 1e-12)


def test_schedule_tail_matches_slice(params):
    sched = build_schedule(mission_profile(60.0), Tables(), params, params.mtow)
    tail = sched.tail(15)
    assert len(tail) == 45
    np.testing.assert_array_equal(tail.eta, sched.eta[15:])
