import numpy as np
import pytest

from pseudofactor import IndicatorPanel, ModelParams, WeightMatrix

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for key, value in report.user_properties:
        if key == "criterion":
            prev = _CRITERIA.get(value, True)
            _CRITERIA[value] = prev and report.passed


@pytest.fixture(autouse=True)
def _tag_criterion(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        request.node.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if _CRITERIA[n] else 'FAIL'}")


def one_by_one(y, w=1.0, mu=0.0, gamma=0.0, sigma2=1.0):
    """Single-indicator, single-subject problem."""
    panel = IndicatorPanel([[y]])
    return panel, WeightMatrix([[w]]), ModelParams([mu], [gamma], [sigma2])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
