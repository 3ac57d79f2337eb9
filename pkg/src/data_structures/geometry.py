"""
Geometry parameter types: camera intrinsics, BEV grid layout, 3D box priors
and geographic poses.
All are frozen pydantic models so they load straight from JSON.
"""

from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field


class CameraIntrinsics(BaseModel):
    """
    Pinhole camera parameters in pixels.

    Attributes:
        fx, fy: Focal lengths (must be positive)
        cx, cy: Principal point
    """

    model_config = ConfigDict(frozen=True)

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float


class BevConfig(BaseModel):
    """
    Bird's-eye-view grid layout.

    Row k-1 is nearest the camera, which sits at the bottom-center of the
    grid. Rows run forward (Z), columns run laterally (X).

    Attributes:
        k: Number of rows
        l: Number of columns
        extent_z_m: Forward extent in meters
        extent_x_m: Lateral extent in meters
    """

    model_config = ConfigDict(frozen=True)

    k: int = Field(default=128, gt=0)
    l: int = Field(default=64, gt=0)
    extent_z_m: float = Field(default=60.0, gt=0)
    extent_x_m: float = Field(default=30.0, gt=0)

    @property
    def res_z(self) -> float:
        """Meters per row."""
        return self.extent_z_m / self.k

    @property
    def res_x(self) -> float:
        """Meters per column."""
        return self.extent_x_m / self.l

    @property
    def shape(self) -> Tuple[int, int]:
        """Grid shape as (rows, cols)."""
        return (self.k, self.l)


class BoxPrior(BaseModel):
    """Mean footprint of a 3D object box in meters."""

    model_config = ConfigDict(frozen=True)

    length: float = Field(default=3.9, gt=0)
    width: float = Field(default=1.6, gt=0)


class GeoPose(BaseModel):
    """
    GPS position and driving direction.

    Attributes:
        lat, lon: Degrees
        heading_deg: Degrees clockwise from north
    """

    model_config = ConfigDict(frozen=True)

    lat: float = Field(ge=-90.0, le=90.0)
    lon: float = Field(ge=-180.0, le=180.0)
    heading_deg: float = 0.0
