import math

import numpy as np
import pytest

from melform import example as E
from melform.phase import catalog


@pytest.fixture(scope="session")
def pendulum():
    return catalog("pendulum")


@pytest.fixture(scope="session")
def forced():
    """(extended pendulum, lifted closed-form separatrix, A = H0 o pi)."""
    ext, orbit = E.forced_pendulum()
    return ext, orbit, ext.parse("p^2/2 + cos(q)")


@pytest.fixture(scope="session")
def bump():
    sys = E.bump_system()
    recs = E.end_orbits(sys)
    return sys, recs, E.heteroclinic(sys, recs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TWO_PI = 2.0 * math.pi
