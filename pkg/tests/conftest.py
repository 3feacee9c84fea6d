import numpy as np
import pytest

from echoroom.geometry import Pose, random_pose
from echoroom.simulator import FixedSource, Scene, box_room

STANDARD_MICS = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


def random_tetrahedron(rng, spread=1.0, min_det=0.05):
    """Four random points whose homogeneous determinant is comfortably non-zero."""
    while True:
        m = rng.normal(scale=spread, size=(4, 3))
        if abs(np.linalg.det(np.vstack([m.T, np.ones(4)]))) > min_det * spread ** 3:
            return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def room():
    return Scene(tuple(box_room((0, 0, 0), (6, 5, 3))), FixedSource([1.7, 2.3, 1.1]))


@pytest.fixture
def drone():
    from echoroom.experiments import default_drone
    return default_drone()


@pytest.fixture
def centred_pose():
    return Pose(np.array([1.0, 0, 0, 0]), np.array([3.0, 2.5, 1.5]))


def generic_pose(seed, box=((1.0, 1.0, 0.8), (5.0, 4.0, 2.2))):
    return random_pose(np.random.default_rng(seed), box)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"AC{k:<2} {'PASS' if ok else 'FAIL'}  {detail}")
