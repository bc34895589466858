import pytest

_CRITERIA: dict = {}


@pytest.fixture
def record():
    """``record(key, ok, detail)`` prints a PASS/FAIL line and fails the test when ``ok`` is false."""

    def _record(key, ok: bool, detail: str):
        label = f"criterion {key}" if isinstance(key, int) else key
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        _CRITERIA[key if isinstance(key, int) else 99] = line
        print(line)
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[key])
