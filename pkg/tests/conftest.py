import numpy as np
import pytest

from kummer_optics.sphere_geometry import build_grid


@pytest.fixture(scope="session")
def s1_grid():
    return build_grid(1, 128)


@pytest.fixture(scope="session")
def s2_grid():
    return build_grid(2, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
