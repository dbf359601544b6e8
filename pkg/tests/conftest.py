"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_outcomes: dict[int, tuple[str, str, float]] = {}


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
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        prev = _outcomes.get(number)
        # a criterion split over several tests passes only if all of them do
        if prev is not None and prev[0] != "PASS":
            status = prev[0]
        elapsed = report.duration + (prev[2] if prev else 0.0)
        _outcomes[number] = (status, title, elapsed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status, title, elapsed = _outcomes[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}  ({elapsed:.2f}s)")
    passed = sum(s == "PASS" for s, _, _ in _outcomes.values())
    terminalreporter.write_line(f"{passed}/{len(_outcomes)} acceptance criteria passed")
