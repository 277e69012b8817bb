import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectralrep import dist

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def joint_tables(draw, max_n=6, max_m=6, square=False):
    """Random positive joint tables with entries bounded away from zero."""
    n = draw(st.integers(1, max_n))
    m = n if square else draw(st.integers(1, max_m))
    raw = draw(arrays(np.float64, (n, m), elements=st.floats(0.05, 1.0)))
    return dist.from_table(raw)


@pytest.fixture
def block4():
    return dist.block4()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.LINES:
            terminalreporter.write_line(line)
