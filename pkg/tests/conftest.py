import time
from types import SimpleNamespace

import numpy as np
import pytest

from mgsta import analysis, model, synthesis, trailer

# criterion number -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


def scalar_plant(A=-1.0, E=0.0, C=0.0, D=0.0, B=1.0):
    return model.make_polytope([{"A": [[A]], "E": [[E]], "C": [[C]], "D": [[D]], "B": [[B]]}])


def scalar_design(alpha=2.0, rho=1.0, gamma=2.0, omega=50.0, zeta0=0.5, sigma0=0.5):
    return model.DesignConfig(
        gamma=gamma, alpha=alpha, rho=rho, omega=omega, H=[[1.0], [0.0]], J=[[0.0], [1.0]],
        zeta0=[zeta0], sigma0=[sigma0], eta0=[0.0],
    )


@pytest.fixture(scope="session")
def trailer_params():
    return trailer.TrailerParams()


@pytest.fixture(scope="session")
def trailer_plant(trailer_params):
    return trailer.build_trailer_polytope(trailer_params)


@pytest.fixture(scope="session")
def trailer_design(trailer_params):
    return trailer.default_design(trailer_params)


@pytest.fixture(scope="session")
def trailer_result(trailer_plant, trailer_design):
    t0 = time.perf_counter()
    res = synthesis.solve_inner(trailer_plant, trailer_design)
    res.wall_seconds = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def trailer_certificates(trailer_result):
    return analysis.Certificates.from_result(trailer_result)


@pytest.fixture(scope="session")
def trailer_runs(trailer_result, trailer_certificates):
    """All 8 vertices, 30 s at dt = 1e-4, synthesized gains, every 10th step recorded."""
    scenario = trailer.ScenarioConfig(record_stride=10)
    t0 = time.perf_counter()
    runs, _ = trailer.run_benchmark(scenario, trailer_result.gains(), trailer_certificates)
    return SimpleNamespace(runs=runs, seconds=time.perf_counter() - t0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
