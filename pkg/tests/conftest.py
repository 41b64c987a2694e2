import numpy as np
import pytest

from dlsem.dataio import holzinger_data, select_columns
from dlsem.model import holzinger_spec
from dlsem.moments import MomentSet


@pytest.fixture(scope="session")
def hs_spec():
    return holzinger_spec()


@pytest.fixture(scope="session")
def hs_data(hs_spec):
    names, X = holzinger_data()
    return select_columns(names, X, hs_spec.variables)


@pytest.fixture(scope="session")
def hs_moments(hs_data):
    return MomentSet.from_data(hs_data)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, p, scale=1.0):
    A = rng.normal(size=(p, p))
    return scale * (A @ A.T / p + np.eye(p))
