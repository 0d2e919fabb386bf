import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_criteria = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    detail = dict(report.user_properties).get("criterion", "")
    prev = _criteria.get(key)
    # a failing setup, call or teardown phase fails the criterion
    if report.when == "call" or report.failed or prev is None:
        outcome = "FAIL" if report.failed else ("SKIP" if report.skipped else "PASS")
        if prev is not None and prev[0] == "FAIL":
            outcome = "FAIL"
        _criteria[key] = (outcome, m.group(2).replace("_", " "), detail or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria):
        outcome, name, detail = _criteria[key]
        terminalreporter.write_line(f"{outcome} criterion {key:2d} {name}: {detail}")
