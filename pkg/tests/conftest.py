import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the terminal summary."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
