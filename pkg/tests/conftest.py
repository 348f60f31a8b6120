import numpy as np
import pytest

from ctdebias.dynmodel import LORENZ_THETA, VDP_THETA, lorenz, van_der_pol
from ctdebias.simkit import TrajectoryConfig, integrate

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def vdp_traj_cfg():
    return TrajectoryConfig(van_der_pol(), VDP_THETA, [0.0, 0.001], n=2000, h=1 / 2000)


@pytest.fixture(scope="session")
def vdp_clean(vdp_traj_cfg):
    return integrate(vdp_traj_cfg)


@pytest.fixture(scope="session")
def lorenz_traj_cfg():
    return TrajectoryConfig(lorenz(), LORENZ_THETA, [-8.0, 8.0, 27.0], n=100_000, h=0.001)


@pytest.fixture(scope="session")
def lorenz_clean(lorenz_traj_cfg):
    return integrate(lorenz_traj_cfg)


@pytest.fixture(scope="session")
def lorenz_short():
    """A 20 s Lorenz segment for unit tests that do not need the full run."""
    cfg = TrajectoryConfig(lorenz(), LORENZ_THETA, [-8.0, 8.0, 27.0], n=20_000, h=0.001)
    return cfg, integrate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
