import re

import pytest

# criterion number -> [outcome, detail]
_ACCEPTANCE = {}
_NAME = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


@pytest.fixture
def detail(request):
    """Attach a one-line summary to the running acceptance criterion."""
    m = _NAME.search(request.node.nodeid)

    def _set(text):
        if m:
            _ACCEPTANCE.setdefault(int(m.group(1)), ["FAIL", ""])[1] = text
        print(text)

    return _set


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m:
        return
    entry = _ACCEPTANCE.setdefault(int(m.group(1)), ["FAIL", ""])
    if report.when == "call":
        entry[0] = "PASS" if report.passed else "FAIL"
        if report.failed and not entry[1]:
            entry[1] = str(report.longrepr).strip().splitlines()[-1][:160]
    elif report.failed:
        entry[0] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        outcome, text = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {outcome}  {text}")
