"""Shared pytest hooks."""
from __future__ import annotations

import sys


def pytest_terminal_summary(terminalreporter):
    # verdict lines from the release-gate tests, shown outside capture
    module = sys.modules.get("tests.test_acceptance")
    if module is not None and module.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in module.VERDICTS:
            terminalreporter.line(line)
