import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "kflip", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("kflip")

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or report.failed or report.skipped:
        prev = _CRITERIA.get(number, (title, "PASS"))[1]
        state = "FAIL" if report.failed else ("SKIP" if report.skipped else "PASS")
        if prev == "FAIL":
            state = "FAIL"
        _CRITERIA[number] = (title, state)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, state = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {state}  {title}")
