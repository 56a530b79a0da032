import pytest

ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(key, ok, detail):
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE[key] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
            terminalreporter.write_line(ACCEPTANCE[key])
