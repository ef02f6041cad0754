import pytest

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class AcceptanceLog:
    """Collects one verdict per acceptance criterion for the terminal summary."""

    def record(self, number: int, title: str, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE[number] = (title, ok, detail)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
