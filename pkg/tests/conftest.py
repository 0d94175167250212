from __future__ import annotations

import pytest

from helpers import two_client_example

ACCEPTANCE_TITLES = {
    1: "Erlang-C recursion matches the factorial form",
    2: "overflow robustness at large server counts",
    3: "dN/da matches central differences",
    4: "non-convexity witness table",
    5: "worked two-client example reproduced by the oracle",
    6: "greedy allocation equals enumeration",
    7: "formulation consistency against the oracle",
    8: "thinned curves versus the full-curve baseline",
    9: "genetic heuristic sanity on the worked example",
    10: "chord over-estimation and surface refinement",
}

_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


@pytest.fixture
def worked_example():
    return two_client_example


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(n, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_TITLES):
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        elif any(r == "failed" for r in results):
            status = "FAIL"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {ACCEPTANCE_TITLES[n]}")
