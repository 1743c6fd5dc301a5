import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skylens import mirror
from skylens.skysim.dataset import mirror_profile

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def optical():
    return mirror.OpticalConfig()


@pytest.fixture(scope="session")
def designed(optical):
    return mirror_profile("designed", optical)


@pytest.fixture(scope="session")
def hemisphere(optical):
    return mirror_profile("hemisphere", optical)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES):
            terminalreporter.write_line(line)
