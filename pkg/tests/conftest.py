import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def _verdict(number, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
