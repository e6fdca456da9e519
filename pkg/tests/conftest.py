import numpy as np
import pytest

from snrlab.schedules import (ChannelSchedule, LogSnrEndpoints, Regime,
                              Sigmoid)


@pytest.fixture
def vp_sigmoid():
    return ChannelSchedule(Sigmoid(), Regime.VP, LogSnrEndpoints(-8.7, 5.0))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
