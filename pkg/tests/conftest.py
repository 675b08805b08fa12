import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tripodwave import model

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


@pytest.fixture
def p():
    return model.PhysicalParams.natural()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def config_path(name: str) -> str:
    return os.path.join(CONFIGS, name)
