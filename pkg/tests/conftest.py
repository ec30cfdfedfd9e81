import sys

import pytest
from hypothesis import settings

from stackplan.scene_model import RigidBox, Scene, Shelf

settings.register_profile("stackplan", deadline=None, max_examples=40)
settings.load_profile("stackplan")

CUBE = (0.10, 0.10, 0.10)


def cube(box_id, x, y_bottom=0.0, z_front=0.02, half=CUBE, yaw=0.0):
    return RigidBox(box_id, half, (x, y_bottom + half[1], z_front + half[2]), yaw)


def scene_of(*boxes, shelf=None):
    return Scene(shelf or Shelf(), tuple(boxes))


@pytest.fixture
def two_stack():
    return scene_of(cube("A", 0.5), cube("B", 0.5, 0.2))


@pytest.fixture
def three_stack():
    return scene_of(cube("A", 0.5), cube("B", 0.5, 0.2), cube("C", 0.5, 0.4))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
