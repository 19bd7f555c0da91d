import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance criterion reporting -----------------------------------------
# Tests marked ``@pytest.mark.criterion(n, "title")`` get one PASS/FAIL line
# each in the terminal summary, whatever the capture settings.

_CRITERIA = []


def _criterion_key(c):
    text = str(c[0])
    digits = text.rstrip("abcdefghijklmnopqrstuvwxyz")
    return int(digits), text[len(digits):]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if hasattr(report, "wasxfail"):
            status = "FAIL (expected, see notes)" if report.skipped else "XPASS"
        else:
            status = "PASS" if report.passed else "FAIL"
        detail = item.user_properties and dict(item.user_properties).get("detail", "")
        _CRITERIA.append((mark.args[0], mark.args[1], status, detail or ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_CRITERIA, key=_criterion_key):
        line = f"criterion {number}: {status} - {title}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
