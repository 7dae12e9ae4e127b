import pytest

CRITERION_LINES = []


@pytest.fixture
def record_criterion():
    return CRITERION_LINES.append


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for r in sorted(CRITERION_LINES, key=lambda r: r.number):
            terminalreporter.write_line(r.line())
            terminalreporter.write_line(r.detail())
