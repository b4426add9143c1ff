import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import gate  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if gate.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(gate.RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
