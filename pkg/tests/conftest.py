import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tactile_servo import (ContactScene, Displacement,
                           SensorCalibration, extract, render)
from tactile_servo.harness import preset_keypoints, preset_scene


@pytest.fixture(scope="session")
def cal():
    return SensorCalibration()


@pytest.fixture(scope="session")
def gear(cal):
    scene, kp_mm = preset_scene("gear", noise_sigma=0.0)
    return scene, preset_keypoints(kp_mm, cal)


@pytest.fixture(scope="session")
def block(cal):
    scene, kp_mm = preset_scene("block", noise_sigma=0.0)
    return scene, preset_keypoints(kp_mm, cal)


@pytest.fixture(scope="session")
def gear_goal_image(gear, cal):
    scene, _ = gear
    return render(scene, Displacement(0, 0, 0), cal, seed=1)


@pytest.fixture(scope="session")
def gear_goal_map(gear_goal_image):
    return extract(gear_goal_image)


@pytest.fixture(scope="session")
def empty_scene():
    return ContactScene(shapes=(), noise_sigma=0.0)
