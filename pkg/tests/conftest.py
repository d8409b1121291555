"""Shared pytest hooks: the acceptance suite reports one PASS/FAIL line per criterion."""

CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    CRITERIA[number] = (title, passed, detail)
    print(f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        title, passed, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
