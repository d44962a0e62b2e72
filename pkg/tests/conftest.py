"""Shared pytest wiring.

The acceptance module appends one line per criterion here; the terminal
summary hook prints them after the run so the verdicts are visible even
with output capturing on.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
