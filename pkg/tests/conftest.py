import numpy as np
import pytest

from lockdiff.params import TireParams, VehicleParams, load_default_vehicle
from lockdiff.track import make_circle_track, make_line_track


@pytest.fixture(scope="session")
def vehicle() -> VehicleParams:
    return load_default_vehicle()[0]


@pytest.fixture(scope="session")
def tires() -> TireParams:
    return load_default_vehicle()[1]


@pytest.fixture(scope="session")
def line_track():
    return make_line_track(length=500.0, ds=1.0)


@pytest.fixture(scope="session")
def circle_track():
    return make_circle_track(radius=30.0, ds=0.05)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
