import pytest

CRITERIA = {}


@pytest.fixture
def report():
    """Record one verdict line per acceptance criterion: ``report(n, passed, detail)``."""
    def record(number, passed, detail):
        CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[number])
