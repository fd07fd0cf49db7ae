import numpy as np
import pytest

from boussinesq_control.problem import ProjectionVariant, example1, example2


@pytest.fixture(scope="session")
def ex1_small():
    """Example 1 at h = 1/8 with eight time steps."""
    return example1(n=8, N=8, T=1.0)


@pytest.fixture(scope="session")
def ex2_small():
    """Example 2 at n = 12 with eight time steps (inflow still ramping up)."""
    return example2(n=12, N=8, T=2.0)


@pytest.fixture(scope="session", params=list(ProjectionVariant), ids=lambda v: v.value)
def ex1_variant(request):
    return example1(n=8, N=8, T=1.0, projection=request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_control(setup, rng, scale=1.0):
    return scale * rng.standard_normal(setup.control.shape)


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        ok = report.passed
        key = marker.args[0]
        _CRITERIA[key] = _CRITERIA.get(key, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if _CRITERIA[key] else 'FAIL'}")
