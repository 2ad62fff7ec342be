import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hotvapor import load_system

# property tests run at least this many examples each
PROPERTY_CASES = 500

settings.register_profile(
    "invariants",
    max_examples=PROPERTY_CASES,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("invariants")


@pytest.fixture(scope="session")
def system():
    return load_system()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _clean_constant_overrides(monkeypatch):
    for key in list(os.environ):
        if key.startswith("HOTVAPOR_"):
            monkeypatch.delenv(key)
