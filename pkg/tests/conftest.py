import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_criteria = []


@pytest.fixture
def report(request):
    """Print one pass/fail line for an acceptance criterion, uncaptured."""
    terminal = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, ok, detail):
        line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        _criteria.append(line)
        if terminal is not None:
            terminal.write_line("")
            terminal.write_line(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
