import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def report():
    """Record the verdict line for one acceptance criterion."""
    def _record(number: int, passed: bool | None, detail: str) -> None:
        verdict = {True: "PASS", False: "FAIL", None: "FLAG"}[passed]
        _ACCEPTANCE[number] = f"criterion {number:>2}: {verdict}  {detail}"
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
