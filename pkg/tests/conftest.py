from __future__ import annotations

from hypothesis import settings

from .acceptance_report import RESULTS

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in RESULTS:
        terminalreporter.write_line(f"{status}  {criterion}: {detail}")
