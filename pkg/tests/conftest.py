"""Test-session configuration.

Collects the acceptance criteria verdict lines (reported by
test_acceptance.py) and prints them as a dedicated section in the
terminal summary, so every run shows one pass/fail line per criterion.
"""

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> str:
    verdict = "PASS" if ok else "FAIL"
    line = f"criterion {number} [{verdict}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
