from pathlib import Path

import pytest

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    detail = ""
    if rep.failed and call.excinfo is not None:
        detail = str(call.excinfo.value).splitlines()[0]
    _criteria[number] = (title, "PASS" if rep.passed else "FAIL", rep.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict, duration, detail = _criteria[number]
        line = f"criterion {number:2d} {verdict}  {title} ({duration:.2f} s)"
        if detail:
            line += f": {detail}"
        tr.write_line(line)


@pytest.fixture
def configs():
    return CONFIGS
