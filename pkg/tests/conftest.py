import numpy as np
import pytest
from hypothesis import settings

from stable_velocity import gmm
from stable_velocity.rng import substream
from stable_velocity.schedules import Schedule

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

KINDS = ("linear", "vp-cosine")


@pytest.fixture(params=KINDS)
def schedule(request):
    return Schedule(request.param)


@pytest.fixture
def linear():
    return Schedule("linear")


@pytest.fixture
def two_mode():
    """Symmetric two-mode 1-D mixture used throughout the Monte Carlo checks."""
    return gmm.GmmSpec(np.array([0.5, 0.5]), np.array([[-2.0], [2.0]]), np.array([[0.25], [0.25]]))


@pytest.fixture(scope="session")
def mixture10():
    """100-mode, 10-D mixture built with the uniform recipe (seed 0)."""
    return gmm.random_spec(10, 100, substream(0, "spec"))


@pytest.fixture
def std_normal():
    return gmm.single_gaussian([0.0], [1.0])


def delta_spec(point):
    point = np.atleast_1d(np.asarray(point, dtype=np.float64))
    return gmm.single_gaussian(point, 1e-30)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number: int, name: str, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (name, bool(passed), detail)
    print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {name} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {name} {detail}")
