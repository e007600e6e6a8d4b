import numpy as np
import pytest

from app.config import parse_scenario_config
from tests.scenarios import small_config_dict


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    return parse_scenario_config(small_config_dict())
