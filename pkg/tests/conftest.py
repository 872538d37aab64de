"""Collects the PASS/FAIL lines of the acceptance suite and prints them at the end."""
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one acceptance line; returns ``ok`` so tests can assert on it."""

    def record(number, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
        terminalreporter.write_line(line)
