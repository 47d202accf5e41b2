"""Shared test plumbing: the acceptance-criteria verdict section.

Acceptance tests register one line per criterion; the terminal summary hook
prints them after capture ends so the verdicts always reach the console.
"""

acceptance_reports = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_reports:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_reports:
            terminalreporter.write_line(line)
