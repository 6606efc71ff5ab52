import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the acceptance summary and return the flag."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        _VERDICTS.append((number, title, bool(ok), detail))
        print(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
