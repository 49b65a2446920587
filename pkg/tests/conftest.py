from __future__ import annotations

import acceptance_report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_report.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_report.VERDICTS:
            terminalreporter.write_line(line)
