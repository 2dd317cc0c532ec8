import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pathlung.config import RunConfig
from pathlung.evaluation import DEFAULT_PHANTOM_SEED, default_phantom_spec, generate_phantom
from pathlung.training import train_default_model

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def model():
    """The default forest, trained once per session on the seeded training phantoms."""
    return train_default_model(RunConfig())


@pytest.fixture(scope="session")
def default_phantom():
    return generate_phantom(default_phantom_spec(DEFAULT_PHANTOM_SEED))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
