import numpy as np
import pytest

from lrsge.grammar import default_autolr_grammar
from lrsge.sge import MappingLimits


@pytest.fixture(scope="session")
def grammar():
    return default_autolr_grammar()


@pytest.fixture
def limits():
    return MappingLimits()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
