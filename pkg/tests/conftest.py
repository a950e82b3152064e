import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, passed, detail)``."""
    def record(number, title, passed, detail=""):
        _CRITERIA[number] = (title, bool(passed), detail)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")
    passed = sum(ok for _, ok, _ in _CRITERIA.values())
    tr.write_line(f"{passed}/{len(_CRITERIA)} acceptance criteria met")
