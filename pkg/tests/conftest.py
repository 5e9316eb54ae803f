from collections import defaultdict

import pytest

CRITERIA = {
    1: "gradient correctness",
    2: "spectral oracle",
    3: "frequency weighting contract",
    4: "FMLP as a fixed sine layer",
    5: "variant algebra",
    6: "individual INR upper bound",
    7: "hypernetwork smoke training",
    8: "SIREN initialization ablation",
    9: "initialization statistics",
    10: "determinism and persistence",
    11: "compression accounting",
}

_outcomes = defaultdict(list)


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[crit].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {title}: {status}")
