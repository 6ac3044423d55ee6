import pytest

# filled by test_acceptance.py, one line per acceptance criterion
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def criterion():
    """Record and print the pass/fail line of one acceptance criterion."""

    def record(n: int, passed: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES[n] = line
        print(line)
        return passed

    return record
