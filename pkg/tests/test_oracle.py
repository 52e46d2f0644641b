import numpy as np
import pytest

from conftest import make_problem
from hybridmpc import admm
from hybridmpc.models import PowertrainParams
from hybridmpc.oracle import (
    BudgetError,
    OracleInfeasible,
    GridSpec,
    barrier_solve,
    brute_force_solve,
    equality_fuel,
    grid_rounding_bound,
)


@pytest.fixture(scope="module", params=["parallel", "series"])
def tiny(request):
    return make_problem(delta=600.0, topology=request.param)


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(points_per_step=1)
    with pytest.raises(ValueError):
        GridSpec(variable="phi")


def test_budget_enforced(problem60):
    with pytest.raises(BudgetError):
        brute_force_solve(problem60, GridSpec(2))


def test_pinned_soc_leaves_zero_column():
    params = PowertrainParams(soc_range=(800.0, 800.0))
    pr = make_problem(delta=600.0, params=params, E0=800.0)
    sol = brute_force_solve(pr, GridSpec(5))
    np.testing.assert_allclose(sol.p_b, 0.0)


def test_brute_force_is_equality_feasible(tiny):
    sol = brute_force_solve(tiny, GridSpec(8))
    np.testing.assert_allclose(sol.phi, equality_fuel(tiny, sol.p_b))
    lo, hi = tiny.soc_bounds
    assert sol.E.min() >= lo - 1e-6 and sol.E.max() <= hi + 1e-6


def test_finer_grid_never_worse():
    # 7 points contain the 4-point grid; parallel grids always hold P_b = 0
    pr = make_problem(delta=600.0)
    coarse = brute_force_solve(pr, GridSpec(4)).objective
    fine = brute_force_solve(pr, GridSpec(7)).objective
    assert fine <= coarse + 1e-12


def test_barrier_is_tight_and_feasible(tiny):
    sol = barrier_solve(tiny)
    assert tiny.violation(sol) <= 1e-6
    assert abs(tiny.relaxation_gap(sol)) <= 1e-6


def test_barrier_below_any_grid(tiny):
    ref = barrier_solve(tiny)
    grid = brute_force_solve(tiny, GridSpec(12))
    assert ref.objective <= grid.objective * (1 + 1e-9)


def test_admm_sandwiched(tiny):
    ref = barrier_solve(tiny)
    grid = brute_force_solve(tiny, GridSpec(12))
    sol = admm.solve(tiny)
    assert sol.objective <= grid.objective
    assert sol.objective >= ref.objective * (1 - 1e-3)


def test_grid_bound_holds(tiny):
    pr = tiny
    ref = barrier_solve(pr)
    grid = GridSpec(14)
    bound = grid_rounding_bound(pr, ref, grid)
    assert np.isfinite(bound)
    gap = brute_force_solve(pr, grid).objective - ref.objective
    assert -1e-9 <= gap <= bound + 1e-9


def test_barrier_matches_admm_default(problem60):
    ref = barrier_solve(problem60)
    sol = admm.solve(problem60)
    assert abs(sol.objective - ref.objective) <= 1e-3 * ref.objective


def test_infeasible_grid_reported():
    pr = make_problem(delta=600.0, topology="series")
    with pytest.raises(OracleInfeasible):
        brute_force_solve(pr, GridSpec(4))
