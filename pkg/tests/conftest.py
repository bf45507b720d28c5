import numpy as np
import pytest

from mixedtraffic.experiments import Setup, design
from mixedtraffic.traffic import OvmParams, linearized_ring_model


@pytest.fixture(scope="session")
def homogeneous_model():
    return linearized_ring_model([OvmParams()] * 19, 15.0, 400.0)


@pytest.fixture(scope="session")
def hetero_setup():
    return Setup.default(n=20, seed=0)


@pytest.fixture(scope="session")
def hetero_design(hetero_setup):
    return design(hetero_setup)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
