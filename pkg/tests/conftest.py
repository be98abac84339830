"""Shared pytest plumbing.

The acceptance tests append one human-readable verdict line per criterion
to ACCEPTANCE_LINES; the terminal-summary hook below replays them after the
normal pytest report so they are visible without -s.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria", sep="-")
    for line in ACCEPTANCE_LINES:
        terminalreporter.line(line)
