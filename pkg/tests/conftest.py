from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from gpovertake import track

settings.register_profile(
    "ci",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much],
)
settings.load_profile("ci")

REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def straight():
    return track.make_straight(length=50.0)


@pytest.fixture(scope="session")
def circle():
    return track.make_circle(radius=5.0)


@pytest.fixture(scope="session")
def s_curve():
    return track.make_s_curve()


@pytest.fixture(scope="session")
def oval():
    return track.load_raceline(REPO_ROOT / "tracks" / "oval_chicane.csv", closed=True)


@pytest.fixture(scope="session")
def repo_root():
    return REPO_ROOT
