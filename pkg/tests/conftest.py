import pytest

_LINES = []


@pytest.fixture
def accept(capsys):
    """record(num, ok, detail): print one PASS/FAIL line for an acceptance
    criterion and fail the test when ``ok`` is false."""

    def record(num, ok, detail):
        line = f"ACCEPTANCE {num:>2} {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append((num, line))
        with capsys.disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
