import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

settings.register_profile("ci", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

from fracfk.model import ModelParams  # noqa: E402


@pytest.fixture
def base_params():
    """d = 1, H0 = H1 = 0.75, beta = 1, T = 1."""
    return ModelParams.build(1, 0.75, [0.75], [1.0], 1.0)


@pytest.fixture
def zero_noise(base_params):
    return base_params.zero_noise()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
