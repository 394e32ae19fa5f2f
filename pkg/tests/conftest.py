import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from infobroker.model import MarketParams, Population

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def accept():
    """Record one pass/fail line per acceptance criterion; printed in the summary."""
    def record(criterion: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


@pytest.fixture
def base_params():
    return MarketParams.asymmetric(1000, 1, 10, 9)


@st.composite
def asymmetric_params(draw, V=1000.0):
    t = draw(st.floats(0.5, 5.0))
    L = draw(st.floats(1.0, 9.0))
    H = L + draw(st.floats(0.1, 2.0 * t))
    return MarketParams.asymmetric(V, t, H, L)


@st.composite
def discrete_population(draw, n_min=1, n_max=5):
    n = draw(st.integers(n_min, n_max))
    xs = sorted(draw(st.lists(st.floats(0.01, 0.99), min_size=n, max_size=n, unique=True)))
    if np.any(np.diff(xs) < 1e-3):
        xs = list(np.linspace(0.05, 0.95, n))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)))
    return Population.discrete(xs, w / w.sum())
