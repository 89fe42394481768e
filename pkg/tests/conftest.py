import numpy as np
import pytest

from photonlab.config import ExperimentConfig
from photonlab.raman import simulate_storage


@pytest.fixture(scope="session")
def base_cfg():
    return ExperimentConfig.builtin("calibrated")


@pytest.fixture(scope="session")
def outcome(base_cfg):
    c = base_cfg
    return simulate_storage(c.source.envelope, c.protocol, c.memory)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (len(s.split()[1]), s)):
            terminalreporter.write_line(line)
