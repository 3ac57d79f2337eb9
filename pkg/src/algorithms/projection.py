"""
Perspective to bird's-eye-view projection.

Pixels are unprojected through their depth into the camera frame, the height
axis is dropped and class distributions are averaged per BEV cell. Also lifts
2D object boxes to BEV rectangles using a mean 3D footprint.

BEV convention: row k-1 is nearest the camera, the camera sits at the
bottom-center, and a point (X, Z) lands in
    row = k - 1 - floor(Z / res_z),  col = floor((X + extent_x / 2) / res_x).
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple, Union

import numpy as np

from src.data_structures.geometry import BevConfig, BoxPrior, CameraIntrinsics
from src.data_structures.grids import BevMap, DepthMap, SemanticGrid
from src.utils.errors import OutOfExtentError, ValidationError

logger = logging.getLogger(__name__)


class ProjectionStats(NamedTuple):
    """Pixel accounting of one projection pass."""

    valid: int
    projected: int
    skipped: int


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned pixel box; x1 and y1 are exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValidationError(f"Empty box {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}


@dataclass(frozen=True)
class BevRect:
    """
    Axis-aligned rectangle in a BEV grid.

    Attributes:
        row_min, row_max, col_min, col_max: Inclusive cell bounds (clipped)
        center_x, center_z: Metric center in meters
        length, width: Metric size along Z and X
    """

    row_min: int
    row_max: int
    col_min: int
    col_max: int
    center_x: float
    center_z: float
    length: float
    width: float

    @property
    def n_rows(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def n_cols(self) -> int:
        return self.col_max - self.col_min + 1

    def cell_mask(self, cfg: BevConfig) -> np.ndarray:
        mask = np.zeros(cfg.shape, dtype=bool)
        mask[self.row_min : self.row_max + 1, self.col_min : self.col_max + 1] = True
        return mask


def unproject(u: float, v: float, d: float, K: CameraIntrinsics) -> Tuple[float, float, float]:
    """
    Map a pixel with metric depth into the camera frame.

    Args:
        u, v: Pixel coordinates
        d: Depth in meters along the optical axis
        K: Camera intrinsics

    Returns:
        (X, Y, Z) in meters with X = (u-cx)d/fx, Y = (v-cy)d/fy, Z = d

    Raises:
        ValidationError: If depth is not positive
    """
    if not d > 0:
        raise ValidationError(f"Depth must be positive, got {d}")
    return ((u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, float(d))


def project_point(X: float, Y: float, Z: float, K: CameraIntrinsics) -> Tuple[float, float]:
    """
    Pinhole projection of a camera-frame point to pixel coordinates.

    Raises:
        ValidationError: If the point is not in front of the camera
    """
    if not Z > 0:
        raise ValidationError(f"Point must have Z > 0, got {Z}")
    return (K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy)


def metric_to_cell_indices(
    X: np.ndarray, Z: np.ndarray, cfg: BevConfig
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorised BEV binning.

    Returns:
        (rows, cols, inside) where inside marks points within the extent
    """
    z_idx = np.floor(np.asarray(Z, dtype=np.float64) / cfg.res_z).astype(np.int64)
    cols = np.floor(
        (np.asarray(X, dtype=np.float64) + cfg.extent_x_m / 2.0) / cfg.res_x
    ).astype(np.int64)
    inside = (z_idx >= 0) & (z_idx < cfg.k) & (cols >= 0) & (cols < cfg.l)
    return cfg.k - 1 - z_idx, cols, inside


def metric_to_cell(X: float, Z: float, cfg: BevConfig) -> Tuple[int, int]:
    """
    BEV cell holding a metric point.

    Raises:
        OutOfExtentError: If the point lies outside the grid
    """
    rows, cols, inside = metric_to_cell_indices(np.array([X]), np.array([Z]), cfg)
    if not inside[0]:
        raise OutOfExtentError(f"Point (X={X:.3f}, Z={Z:.3f}) lies outside the BEV extent")
    return int(rows[0]), int(cols[0])


def cell_center(row: Union[int, np.ndarray], col: Union[int, np.ndarray], cfg: BevConfig):
    """Metric (X, Z) of cell centers."""
    z = (cfg.k - 1 - np.asarray(row) + 0.5) * cfg.res_z
    x = (np.asarray(col) + 0.5) * cfg.res_x - cfg.extent_x_m / 2.0
    return x, z


def cell_centers(cfg: BevConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Metric (X, Z) of every cell center, each of shape (k, l)."""
    rows, cols = np.meshgrid(np.arange(cfg.k), np.arange(cfg.l), indexing="ij")
    return cell_center(rows, cols, cfg)


def project_to_bev(
    seg_bg: SemanticGrid,
    depth: DepthMap,
    K: CameraIntrinsics,
    cfg: BevConfig,
    return_stats: bool = False,
):
    """
    Accumulate background class distributions into the BEV grid.

    Every valid pixel with mass is unprojected; height is discarded and the
    point binned with the floor rule. Cells receiving points hold the average
    of their contributions; points outside the extent are dropped.

    Args:
        seg_bg: Perspective class distributions over background channels
        depth: Depth map of the same size
        K: Camera intrinsics
        cfg: BEV grid layout
        return_stats: Also return ProjectionStats

    Returns:
        BevMap, or (BevMap, ProjectionStats) when return_stats is True

    Raises:
        ValidationError: If segmentation and depth sizes differ
    """
    if seg_bg.shape != depth.shape:
        raise ValidationError(
            f"Segmentation {seg_bg.shape} and depth {depth.shape} sizes differ"
        )

    valid = depth.valid & seg_bg.observed_mask()
    v_idx, u_idx = np.nonzero(valid)
    d = depth.depth[v_idx, u_idx]
    X = (u_idx - K.cx) * d / K.fx
    rows, cols, inside = metric_to_cell_indices(X, d, cfg)

    n_cells = cfg.k * cfg.l
    flat = rows[inside] * cfg.l + cols[inside]
    dist = seg_bg.data[v_idx[inside], u_idx[inside]]

    counts = np.bincount(flat, minlength=n_cells).astype(np.float64)
    sums = np.stack(
        [np.bincount(flat, weights=dist[:, c], minlength=n_cells) for c in range(seg_bg.channels)],
        axis=1,
    ).astype(np.float64)  # bincount of an empty index array is int64
    hit = counts > 0
    sums[hit] /= counts[hit, None]
    # contributions are normalized, renormalizing removes rounding drift only
    mass = sums.sum(axis=1)
    sums[hit] /= mass[hit, None]

    grid = SemanticGrid(sums.reshape(cfg.k, cfg.l, seg_bg.channels), seg_bg.class_ids)
    bev = BevMap.from_grid(grid)

    stats = ProjectionStats(
        valid=int(valid.sum()), projected=int(inside.sum()), skipped=int((~inside).sum())
    )
    logger.info(
        "Projected %d of %d valid pixels (%d outside the extent)",
        stats.projected,
        stats.valid,
        stats.skipped,
    )
    if return_stats:
        return bev, stats
    return bev


def rect_from_metric(
    center_x: float, center_z: float, length: float, width: float, cfg: BevConfig
) -> BevRect:
    """
    Cells covered by a metric rectangle.

    The rectangle is centered on the cell holding its metric center and spans
    ceil(size / res) cells per axis, clipped to the grid.

    Raises:
        OutOfExtentError: If no cell of the rectangle lies inside the grid
    """
    n_rows = max(1, math.ceil(length / cfg.res_z - 1e-9))
    n_cols = max(1, math.ceil(width / cfg.res_x - 1e-9))
    z_center = math.floor(center_z / cfg.res_z)
    c_center = math.floor((center_x + cfg.extent_x_m / 2.0) / cfg.res_x)

    z_lo = z_center - n_rows // 2
    z_hi = z_lo + n_rows - 1
    c_lo = c_center - n_cols // 2
    c_hi = c_lo + n_cols - 1

    z_lo, z_hi = max(z_lo, 0), min(z_hi, cfg.k - 1)
    c_lo, c_hi = max(c_lo, 0), min(c_hi, cfg.l - 1)
    if z_lo > z_hi or c_lo > c_hi:
        raise OutOfExtentError(
            f"Rectangle at (X={center_x:.2f}, Z={center_z:.2f}) lies outside the BEV extent"
        )
    return BevRect(
        row_min=cfg.k - 1 - z_hi,
        row_max=cfg.k - 1 - z_lo,
        col_min=c_lo,
        col_max=c_hi,
        center_x=float(center_x),
        center_z=float(center_z),
        length=float(length),
        width=float(width),
    )


def lift_bbox_to_bev(
    box: PixelBox,
    depth: DepthMap,
    K: CameraIntrinsics,
    prior: BoxPrior,
    cfg: BevConfig,
) -> BevRect:
    """
    Place a prior-sized footprint behind the bottom-center of a 2D box.

    The bottom-center pixel is unprojected with its depth; the footprint is
    axis-aligned and centered at (X, Z + length / 2), i.e. its near edge
    touches the lifted point.

    Args:
        box: 2D pixel box
        depth: Depth map
        K: Camera intrinsics
        prior: Mean footprint
        cfg: BEV grid layout

    Returns:
        BevRect in cells

    Raises:
        ValidationError: If the bottom-center pixel has no valid depth
        OutOfExtentError: If the lifted point falls outside the extent
    """
    u = (box.x0 + box.x1 - 1) / 2.0
    v = float(box.y1 - 1)
    row, col = int(v), int(math.floor(u))
    if not (0 <= row < depth.height and 0 <= col < depth.width) or not depth.valid[row, col]:
        raise ValidationError(f"No valid depth at bottom-center pixel ({col}, {row})")

    X, _, Z = unproject(u, v, float(depth.depth[row, col]), K)
    # the lifted point itself must be in view
    metric_to_cell(X, Z, cfg)
    return rect_from_metric(X, Z + prior.length / 2.0, prior.length, prior.width, cfg)
