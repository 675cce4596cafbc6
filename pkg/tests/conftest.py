import numpy as np
import pytest

from hzdwalk.model import ChainTables, RobotParams


@pytest.fixture(scope="session")
def robot():
    return RobotParams.default()


@pytest.fixture(scope="session")
def tables(robot):
    return ChainTables(robot)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_configuration(rng, scale=0.4):
    """A modest random posture: torso near vertical, knees folded forward."""
    q = np.zeros(5)
    q[0] = rng.uniform(-scale, scale)
    q[1] = rng.uniform(-scale, scale)
    q[2] = rng.uniform(0.05, 0.6)
    q[3] = rng.uniform(-scale, scale)
    q[4] = rng.uniform(0.05, 0.6)
    return q
