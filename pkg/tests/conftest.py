import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not rep.failed:
        return
    number, title = marker.args
    if rep.when == "call" or number not in ACCEPTANCE_LINES:
        status = "PASS" if rep.passed else "FAIL"
        ACCEPTANCE_LINES[number] = f"[{status}] criterion {number}: {title}"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
