"""
Pytest Configuration and Shared Fixtures
"""
from pathlib import Path

import numpy as np
import pytest

from src.data_structures.catalog import default_catalog
from src.data_structures.geometry import BevConfig, CameraIntrinsics
from src.data_structures.grids import BevMap, SemanticGrid

SAMPLE_OSM = Path(__file__).parent.parent / "data" / "sample" / "intersection.osm"


@pytest.fixture
def catalog():
    """Default class catalog: road, sidewalk, background, car, person, unknown."""
    return default_catalog()


@pytest.fixture
def bev_cfg():
    """Full-size grid: 128 x 64 cells over 60 m x 30 m."""
    return BevConfig()


@pytest.fixture
def toy_cfg():
    """Toy grid for the learned refiner: 16 x 8 cells over 8 m x 4 m."""
    return BevConfig(k=16, l=8, extent_z_m=8.0, extent_x_m=4.0)


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=24.0)


@pytest.fixture
def small_bev():
    """
    4 x 3 map over the background classes with the two top rows unobserved.
    Row 2 is road-sidewalk-road, row 3 is background everywhere.
    """
    data = np.zeros((4, 3, 3))
    data[2, 0, 0] = data[2, 2, 0] = 1.0
    data[2, 1, 1] = 1.0
    data[3, :, 2] = 1.0
    return BevMap.from_grid(SemanticGrid(data, (0, 1, 2)))


@pytest.fixture
def osm_text():
    """The sample X intersection with a sidewalk and an ignored building."""
    return SAMPLE_OSM.read_text(encoding="utf-8")
