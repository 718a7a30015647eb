import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from support import ACCEPTANCE_LINES  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
