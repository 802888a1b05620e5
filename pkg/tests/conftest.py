import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Criterion:
    """Collects the named checks of one acceptance criterion."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.checks = []
        self.done = False

    def expect(self, ok, detail):
        self.checks.append((bool(ok), detail))
        return bool(ok)

    @property
    def passed(self):
        return self.done and bool(self.checks) and all(ok for ok, _ in self.checks)

    def conclude(self):
        self.done = True
        assert self.passed, self.line()

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        parts = [("ok " if ok else "MISS ") + d for ok, d in self.checks]
        if not self.done:
            parts.append("aborted before all checks ran")
        return f"[{status}] criterion {self.number} ({self.title}): " + "; ".join(parts)


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def criterion(request):
    opened = []

    def open_(number, title):
        c = Criterion(number, title)
        opened.append(c)
        return c

    yield open_
    for c in opened:
        request.config.acceptance_lines[c.number] = c.line()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
