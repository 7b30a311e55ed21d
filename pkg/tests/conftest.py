"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_outcomes: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    entry = _outcomes.setdefault(number, {"title": title, "failed": [], "ran": 0})
    if report.when == "call":
        entry["ran"] += 1
    if report.failed:
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        e = _outcomes[number]
        status = "FAIL" if e["failed"] else "PASS"
        line = f"criterion {number}: {status}  {e['title']}"
        if e["failed"]:
            line += f"  (failing: {', '.join(e['failed'])})"
        terminalreporter.write_line(line)
