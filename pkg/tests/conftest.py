from __future__ import annotations

import numpy as np
import pytest

from ttpdf.tt import Grid, TTTensor

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "ran": False, "details": []})
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry["ran"] = True
        if report.outcome != "passed":
            entry["passed"] = False
    for name, value in item.user_properties:
        if name == "detail" and report.when == "call":
            entry["details"].append(str(value))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["passed"] and e["ran"] else ("FAIL" if e["ran"] else "SKIP")
        detail = "; ".join(e["details"])
        line = f"[{status}] criterion {number}: {e['title']}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))


def random_tt(rng, shape, ranks, grid=None) -> TTTensor:
    """TT with standard normal blocks; ``ranks`` lists the d - 1 inner ranks."""
    r = [1, *ranks, 1]
    cores = [rng.standard_normal((r[k], n, r[k + 1])) for k, n in enumerate(shape)]
    if grid is None:
        grid = Grid([np.linspace(0.0, 1.0, n) for n in shape])
    return TTTensor(cores, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
