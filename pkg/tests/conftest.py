import os
import sys
from pathlib import Path

import pytest
import yaml

# Ensure project root is in sys.path (important when running from tests/)
ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT_DIR not in sys.path:
    sys.path.insert(0, ROOT_DIR)

from src.bev import CameraIntrinsics  # noqa: E402
from src.world import build_straight_world, parked_car  # noqa: E402

# Reduced camera used by every simulator test
SMALL_CAMERA = {"width": 128, "height": 64, "fx": 64.0, "fy": 64.0, "cx": 64.0, "cy": 32.0}


@pytest.fixture
def small_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(**SMALL_CAMERA)


@pytest.fixture
def empty_world():
    return build_straight_world()


@pytest.fixture
def car_world():
    """100 m straight road with a car parked on the left edge, just across the centerline."""
    return build_straight_world(obstacles=[parked_car(-2.2, 45.0)])


@pytest.fixture
def blocked_world():
    """A building across the whole road between two route points."""
    building = {"class_id": 3, "rect": [-6.0, 30.0, 6.0, 31.0], "height_m": 4.0}
    return build_straight_world(obstacles=[building])


@pytest.fixture
def write_config(tmp_path):
    """Write a world file and a run configuration into tmp_path; returns the config path."""
    def _write(world, /, **overrides) -> Path:
        world_path = tmp_path / "world.json"
        world.to_file(world_path)
        config = {
            "seed": 3,
            "world": str(world_path),
            "camera": dict(SMALL_CAMERA),
            "save_rasters": False,
            "tick_limit": 400,
            "output_dir": str(tmp_path / "runs"),
        }
        config.update(overrides)
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(config), encoding="utf-8")
        return path
    return _write
