"""Collects the acceptance verdicts and prints them after the run."""

VERDICTS = []


def record(number: int, title: str, passed: bool, detail: str = ""):
    VERDICTS.append((number, title, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(VERDICTS):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
