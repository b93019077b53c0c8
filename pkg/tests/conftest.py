import contextlib
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_RESULTS_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = []


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion as PASS or FAIL."""
    results = request.config.stash[_RESULTS_KEY]

    @contextlib.contextmanager
    def record(number, title):
        try:
            yield
        except BaseException as exc:
            results.append((number, title, False, f"{type(exc).__name__}: {exc}"))
            raise
        results.append((number, title, True, ""))

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS_KEY, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(results):
        line = f"[{'PASS' if ok else 'FAIL'}] #{number:>2} {title}"
        if detail:
            line += f"  ({detail.splitlines()[0][:160]})"
        terminalreporter.write_line(line)
