import pytest

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line for a numbered acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
        print(ACCEPTANCE[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
