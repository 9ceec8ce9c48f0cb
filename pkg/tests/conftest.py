import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nnfoc.control import LoopConfig
from nnfoc.plant import MotorParams
from nnfoc.profiles import ReferenceProfile, Segment

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def plant():
    return MotorParams()


@pytest.fixture(scope="session")
def loop(plant):
    return LoopConfig.default(plant)


def short_profile(duration=0.6):
    """A few upward and downward steps, long enough to settle in between."""
    segs = [Segment(0.0, "step", 0.5), Segment(0.2, "step", 0.8), Segment(0.4, "step", 0.35)]
    return ReferenceProfile(tuple(s for s in segs if s.start < duration), duration)


@pytest.fixture
def short_profile_file(tmp_path):
    p = tmp_path / "profile.json"
    p.write_text(json.dumps(short_profile().to_json()))
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
