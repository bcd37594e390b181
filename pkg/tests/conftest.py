import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict():
    """Print and record one ``PASS``/``FAIL`` line per criterion, then assert on it."""

    def record(number, checks):
        failed = [name for name, ok in checks if not ok]
        detail = "; ".join(f"{name}={'ok' if ok else 'FAILED'}" for name, ok in checks)
        line = f"{'PASS' if not failed else 'FAIL'} criterion {number}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert not failed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
