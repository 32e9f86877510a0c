import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "e2e"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def e2e_fixture():
    return FIXTURE_DIR


def random_image(rng, h=64, w=64):
    return rng.uniform(0.0, 1.0, size=(h, w, 3))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
