import numpy as np
import pytest

# (criterion number, title, passed, detail) for the acceptance summary
ACCEPTANCE_LINES: list[tuple[int, str, str, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, jitter=0.1):
    m = rng.standard_normal((n, n))
    return m @ m.T / n + jitter * np.eye(n)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"[{status}] criterion {number:2d} {title}: {detail}")
