import pytest

_VERDICTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{name}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        _VERDICTS.append((name, ok, detail))
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_VERDICTS, key=lambda v: int(v[0].split()[1])):
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")
