import pytest

ACCEPTANCE = {}


@pytest.fixture
def record():
    """Store a criterion outcome for the terminal summary, then assert it."""

    def _record(number, name, ok, detail=""):
        ACCEPTANCE[number] = (name, bool(ok), detail)
        assert ok, f"criterion {number} ({name}) failed: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {name}: {detail}")
