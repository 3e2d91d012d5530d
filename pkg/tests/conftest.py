import re

_CRITERION = re.compile(r"test_criterion_(\d+)_")
_outcomes: dict[int, list[bool]] = {}


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match:
        return
    if report.when == "call" or report.failed or (report.when == "setup" and report.skipped):
        _outcomes.setdefault(int(match.group(1)), []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        verdict = "PASS" if all(_outcomes[number]) else "FAIL"
        terminalreporter.write_line(f"CRITERION {number} {verdict}")
