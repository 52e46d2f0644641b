import numpy as np
import pytest

from hybridmpc.convex import assemble
from hybridmpc.models import PowertrainParams
from hybridmpc.schedule import Tables, build_schedule, mission_profile


def make_problem(delta=60.0, topology="parallel", params=None, E0=None, constant_mass=False, N=None):
    params = params or PowertrainParams()
    sched = build_schedule(mission_profile(delta), Tables(), params, params.mtow, topology=topology)
    E0 = params.soc_range[1] if E0 is None else E0
    return assemble(sched, params.mtow, E0, params, N, constant_mass=constant_mass)


@pytest.fixture(scope="session")
def params():
    return PowertrainParams()


@pytest.fixture(scope="session")
def problem60():
    return make_problem()


@pytest.fixture(scope="session", params=["parallel", "series"])
def problem6(request):
    return make_problem(delta=600.0, topology=request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
