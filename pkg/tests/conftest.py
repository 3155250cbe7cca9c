import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# deterministic property runs; "thorough" raises the case count
settings.register_profile(
    "default", derandomize=True, deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=200
)
settings.register_profile("thorough", parent=settings.get_profile("default"), max_examples=2000)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
