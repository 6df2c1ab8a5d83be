import numpy as np
import pytest
from hypothesis import settings

from chiral_pl import IrfModel, SpinModelParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# filled by test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def irf():
    return IrfModel(s=0.5, t0=5.0)


@pytest.fixture
def small_params():
    # 10^5 excitations keeps Monte Carlo tests quick
    return SpinModelParams(n0=100_000, sigma_tau=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
