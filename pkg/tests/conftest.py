"""Shared pytest hooks: print the acceptance report after the run.

The acceptance tests record one PASS/FAIL line per criterion; default
fd-level capture would otherwise swallow those lines on success, so they
are replayed here in a terminal section once the run finishes.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    for name in ("tests.test_acceptance", "test_acceptance"):
        module = sys.modules.get(name)
        if module is not None:
            break
    lines = getattr(module, "ACCEPTANCE_LINES", None) if module else None
    if lines:
        terminalreporter.section("acceptance report")
        for line in lines:
            terminalreporter.write_line(line)
