import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_problem
from hybridmpc import _fphi
from hybridmpc.convex import ProblemError, assemble, f_phi, f_phi_partials, trivial_solution
from hybridmpc.models import DomainError, PowertrainParams
from hybridmpc.schedule import Tables, build_schedule, mission_profile

TOPOLOGIES = ["parallel", "series"]


@pytest.fixture(scope="module", params=TOPOLOGIES)
def problem(request):
    return make_problem(topology=request.param)


def _sample(problem, rng, n):
    i = rng.integers(problem.N, size=n)
    m = rng.uniform(0.8, 1.0, size=n) * problem.m0
    p = rng.uniform(problem.pb_lo[i], problem.pb_hi[i])
    return i, m, p


def test_partials_match_central_differences(problem, rng):
    worst = 0.0
    for i, m, p in zip(*_sample(problem, rng, 1000)):
        fm, fp = f_phi_partials(int(i), m, p, problem)
        hm, hp = 1e-3, 1e-6 * max(1.0, abs(p))
        dm = (f_phi(i, m + hm, p, problem) - f_phi(i, m - hm, p, problem)) / (2 * hm)
        dp = (f_phi(i, m, p + hp, problem) - f_phi(i, m, p - hp, problem)) / (2 * hp)
        worst = max(worst, abs(dm - fm) / abs(fm), abs(dp - fp) / abs(fp))
    assert worst <= 1e-6


def test_second_derivatives(problem, rng):
    i, m, p = _sample(problem, rng, 200)
    sd = problem.steps.take(i)
    _, fm, fp, fmm, fmp, fpp, _ = _fphi.fphi(sd, m, p, order=2)
    h = 1e-6 * np.maximum(1.0, np.abs(p))
    _, fm1, fp1, _ = _fphi.fphi(sd, m, p + h, order=1)
    _, fm0, fp0, _ = _fphi.fphi(sd, m, p - h, order=1)
    np.testing.assert_allclose((fp1 - fp0) / (2 * h), fpp, rtol=1e-5, atol=1e-12)
    np.testing.assert_allclose((fm1 - fm0) / (2 * h), fmp, rtol=1e-5, atol=1e-14)
    _, fm1, _, _ = _fphi.fphi(sd, m + 1e-2, p, order=1)
    _, fm0, _, _ = _fphi.fphi(sd, m - 1e-2, p, order=1)
    np.testing.assert_allclose((fm1 - fm0) / 2e-2, fmm, rtol=1e-5, atol=1e-16)


@settings(max_examples=200, deadline=None)
@given(
    topology=st.sampled_from(TOPOLOGIES),
    i=st.integers(0, 59),
    a=st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 1.0)),
    b=st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 1.0)),
)
def test_fuel_map_jointly_convex(topology, i, a, b):
    pr = PROBLEMS[topology]
    lo, hi = pr.pb_lo[i], pr.pb_hi[i]
    pts = [(pr.m0 * (0.8 + 0.2 * x), lo + (hi - lo) * y) for x, y in (a, b)]
    mid = tuple(0.5 * (u + v) for u, v in zip(*pts))
    f = [f_phi(i, *pt, pr) for pt in pts]
    assert f_phi(i, *mid, pr) <= 0.5 * (f[0] + f[1]) + 1e-12


@settings(max_examples=100, deadline=None)
@given(topology=st.sampled_from(TOPOLOGIES), i=st.integers(0, 59), x=st.floats(0.0, 1.0), y=st.floats(0.0, 1.0))
def test_fuel_map_falls_with_battery_power(topology, i, x, y):
    # the mass slope changes sign on descent steps, the battery slope never does
    pr = PROBLEMS[topology]
    _, fp = f_phi_partials(i, pr.m0 * (0.8 + 0.2 * x), pr.pb_lo[i] + (pr.pb_hi[i] - pr.pb_lo[i]) * y, pr)
    assert fp <= 0


PROBLEMS = {t: make_problem(topology=t) for t in TOPOLOGIES}


def test_paths_follow_recursions(problem, rng):
    phi = rng.uniform(problem.phi_lo, problem.phi_hi)
    p_b = rng.uniform(problem.pb_lo, problem.pb_hi)
    sol = problem.make_solution(phi, p_b)
    np.testing.assert_allclose(np.diff(sol.m), -problem.delta * phi)
    np.testing.assert_allclose(np.diff(sol.E), -problem.delta * p_b)
    assert sol.objective == pytest.approx(problem.delta * phi.sum())


def test_equality_point_has_zero_gap(problem):
    p_b = np.zeros(problem.N)
    phi = np.empty(problem.N)
    m = problem.m0
    for i in range(problem.N):
        phi[i] = f_phi(i, m, 0.0, problem)
        m -= phi[i] * problem.delta
    sol = problem.make_solution(phi, p_b)
    assert abs(problem.relaxation_gap(sol)) < 1e-12
    assert problem.violation(sol) < 1e-12


def test_violation_detects_relaxed_balance(problem60):
    sol = problem60.make_solution(problem60.phi_lo, np.zeros(problem60.N))
    assert problem60.violation(sol) > 0


def test_constant_mass_freezes_drive_power(params):
    pr = make_problem(constant_mass=True)
    i = 30
    assert f_phi(i, pr.m0, 0.5, pr) == f_phi(i, 0.5 * pr.m0, 0.5, pr)
    full = make_problem()
    assert f_phi(i, pr.m0, 0.5, pr) == pytest.approx(f_phi(i, full.m0, 0.5, full), rel=1e-12)


def test_domain_error_beyond_motor_branch(problem60):
    with pytest.raises(DomainError):
        f_phi(0, problem60.m0, 1e3, problem60)


def test_assemble_errors(params):
    sched = build_schedule(mission_profile(60.0), Tables(), params, params.mtow)
    with pytest.raises(ProblemError):
        assemble(sched, params.mtow, 5000.0, params)
    with pytest.raises(ProblemError):
        assemble(sched, params.mtow, 1000.0, params, N=61)
    with pytest.raises(ProblemError):
        assemble(sched, params.mtow, 1000.0, params, N=0)
    with pytest.raises(ProblemError):
        assemble(sched, 100.0, 1000.0, params)


def test_trivial_solution_needs_capacity(problem60):
    assert trivial_solution(problem60) is None
    big = PowertrainParams(battery_mass=400000.0, soc_range=(350.0, 80000.0))
    pr = make_problem(params=big)
    sol = trivial_solution(pr)
    assert sol is not None and sol.stats.status == "trivial"
    np.testing.assert_array_equal(sol.p_b, pr.pb_hi)
