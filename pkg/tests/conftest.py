import numpy as np
import pytest

from adiabatic_mc.expectations import AnalyticProvider
from adiabatic_mc.model import BetaBinomialModel
from adiabatic_mc.phase import EuclideanKinetic


@pytest.fixture
def model():
    return BetaBinomialModel()


@pytest.fixture
def kin():
    return EuclideanKinetic()


@pytest.fixture
def provider(model):
    return AnalyticProvider(model)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
