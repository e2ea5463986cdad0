import numpy as np
import pytest

from unfolded_precoder import SystemConfig, generate_channel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ref_cfg():
    return SystemConfig.from_db(M=64, K=8, sinr_db=10.0, sigma_nu=1.0)


@pytest.fixture
def small_cfg():
    return SystemConfig.from_db(M=16, K=4, sinr_db=10.0)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def channels_small(small_cfg):
    return generate_channel(small_cfg, 99, n=8)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
