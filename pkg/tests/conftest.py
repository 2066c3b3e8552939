"""Collects one verdict line per acceptance criterion and prints them at the end
of the session, so they show up even when output capturing is on."""

ACCEPTANCE_LINES = []


def record(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  ({detail})"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
