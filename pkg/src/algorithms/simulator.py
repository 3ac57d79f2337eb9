"""
Procedural road-layout simulator.

Samples top-view road layouts (straight and curved roads, T- and
X-intersections, optional sidewalks) as fully observed one-hot BEV maps and
renders objects into them as rectangles. No texture, occlusion or
perspective effects are modelled.

Layouts are drawn in a local frame rotated by the heading jitter about the
camera; a cell is road if its center lies within half the road width of a
centerline and sidewalk if it lies within the following sidewalk strip.
"""

import logging
import math
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.algorithms.projection import cell_center, cell_centers, rect_from_metric
from src.data_structures.catalog import ClassCatalog, default_catalog
from src.data_structures.geometry import BevConfig, BoxPrior
from src.data_structures.grids import BevMap, SemanticGrid, argmax_labels
from src.utils.errors import LayoutError, OutOfExtentError, ValidationError

logger = logging.getLogger(__name__)

TOPOLOGIES = ("straight", "curved", "T-intersection", "X-intersection")
Topology = Literal["straight", "curved", "T-intersection", "X-intersection"]


class LayoutParams(BaseModel):
    """
    Parameters of one road layout.

    Attributes:
        topology: Road shape
        lanes_per_direction: Lanes on each side of the centerline
        lane_width: Meters per lane; the road is 2 * lanes * lane_width wide
        curve_radius: Radius of a curved road (curved only)
        curve_direction: +1 bends right, -1 bends left
        sidewalk: Whether sidewalk strips flank the road
        sidewalk_width: Width of each sidewalk strip in meters
        heading_jitter_deg: Rotation of the layout about the camera
        intersection_distance_m: Distance from the camera to the crossing road
        lateral_offset_m: Sideways shift of the main road
    """

    model_config = ConfigDict(frozen=True)

    topology: Topology = "straight"
    lanes_per_direction: int = Field(default=1, ge=1)
    lane_width: float = Field(default=3.0, gt=0)
    curve_radius: Optional[float] = Field(default=None, gt=0)
    curve_direction: Literal[-1, 1] = 1
    sidewalk: bool = False
    sidewalk_width: float = Field(default=2.0, gt=0)
    heading_jitter_deg: float = 0.0
    intersection_distance_m: float = Field(default=30.0, gt=0)
    lateral_offset_m: float = 0.0

    @model_validator(mode="after")
    def _curve_needs_radius(self) -> "LayoutParams":
        if self.topology == "curved" and self.curve_radius is None:
            raise ValueError("curved layouts need a curve_radius")
        return self

    @property
    def road_half_width(self) -> float:
        return self.lanes_per_direction * self.lane_width


class LayoutPrior(BaseModel):
    """
    Distribution over LayoutParams.

    Attributes:
        topology_weights: Relative weight per topology
        lanes_choices: Lanes per direction, drawn uniformly
        lane_width_range: Uniform lane width range in meters
        sidewalk_prob: Probability of sidewalks
        sidewalk_width_range: Uniform sidewalk width range in meters
        heading_jitter_deg: Jitter drawn uniformly from [-value, value]
        curve_radius_range: Uniform radius range; the lower end is raised
                            above the lateral extent at sampling time
        intersection_distance_range: Uniform crossing distance range
        lateral_offset_max_m: Offset drawn uniformly from [-value, value]
    """

    model_config = ConfigDict(frozen=True)

    topology_weights: Dict[str, float] = Field(
        default_factory=lambda: {name: 1.0 for name in TOPOLOGIES}
    )
    lanes_choices: Tuple[int, ...] = (1, 2, 3)
    lane_width_range: Tuple[float, float] = (2.5, 3.5)
    sidewalk_prob: float = Field(default=0.7, ge=0, le=1)
    sidewalk_width_range: Tuple[float, float] = (1.5, 3.0)
    heading_jitter_deg: float = Field(default=15.0, ge=0)
    curve_radius_range: Tuple[float, float] = (40.0, 150.0)
    intersection_distance_range: Tuple[float, float] = (15.0, 45.0)
    lateral_offset_max_m: float = Field(default=1.0, ge=0)

    @field_validator("topology_weights")
    @classmethod
    def _check_weights(cls, value: Dict[str, float]) -> Dict[str, float]:
        unknown = set(value) - set(TOPOLOGIES)
        if unknown:
            raise ValueError(f"unknown topologies {sorted(unknown)}")
        if any(w < 0 for w in value.values()):
            raise ValueError("topology weights must be nonnegative")
        if not any(w > 0 for w in value.values()):
            raise ValueError("at least one topology needs positive weight")
        return value

    @field_validator("lanes_choices")
    @classmethod
    def _check_lanes(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(n < 1 for n in value):
            raise ValueError("lanes_choices must be nonempty and >= 1")
        return value

    @field_validator(
        "lane_width_range",
        "sidewalk_width_range",
        "curve_radius_range",
        "intersection_distance_range",
    )
    @classmethod
    def _check_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if not 0 < lo <= hi:
            raise ValueError(f"range must satisfy 0 < lo <= hi, got {value}")
        return value


class ObjectSpec(BaseModel):
    """
    Axis-aligned object footprint in the BEV plane.

    Attributes:
        center_x, center_z: Metric center
        length: Extent along Z in meters
        width: Extent along X in meters
        class_id: Foreground class id
    """

    model_config = ConfigDict(frozen=True)

    center_x: float
    center_z: float
    length: float = Field(gt=0)
    width: float = Field(gt=0)
    class_id: int = Field(ge=0)


def sample_layout_params(
    prior: LayoutPrior, cfg: BevConfig, rng: np.random.Generator
) -> LayoutParams:
    """Draw one LayoutParams from the prior."""
    names = [t for t in TOPOLOGIES if prior.topology_weights.get(t, 0.0) > 0]
    weights = np.array([prior.topology_weights[t] for t in names], dtype=np.float64)
    topology = names[int(rng.choice(len(names), p=weights / weights.sum()))]

    lanes = int(prior.lanes_choices[int(rng.integers(len(prior.lanes_choices)))])
    lane_width = float(rng.uniform(*prior.lane_width_range))
    sidewalk = bool(rng.random() < prior.sidewalk_prob)
    sidewalk_width = float(rng.uniform(*prior.sidewalk_width_range))
    jitter = float(rng.uniform(-prior.heading_jitter_deg, prior.heading_jitter_deg))
    offset = float(rng.uniform(-prior.lateral_offset_max_m, prior.lateral_offset_max_m))

    r_lo, r_hi = prior.curve_radius_range
    r_lo = max(r_lo, 1.05 * cfg.extent_x_m)
    radius = float(rng.uniform(r_lo, max(r_lo, r_hi)))
    direction = 1 if rng.random() < 0.5 else -1

    d_lo, d_hi = prior.intersection_distance_range
    d_hi = min(d_hi, 0.9 * cfg.extent_z_m)
    distance = float(rng.uniform(min(d_lo, d_hi), d_hi))

    return LayoutParams(
        topology=topology,
        lanes_per_direction=lanes,
        lane_width=lane_width,
        curve_radius=radius if topology == "curved" else None,
        curve_direction=direction,
        sidewalk=sidewalk,
        sidewalk_width=sidewalk_width,
        heading_jitter_deg=jitter,
        intersection_distance_m=distance,
        lateral_offset_m=offset,
    )


def _centerline_distance(params: LayoutParams, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Distance of layout-frame points to the nearest road centerline."""
    x = x - params.lateral_offset_m
    if params.topology == "straight":
        return np.abs(x)
    if params.topology == "curved":
        cx = params.curve_direction * params.curve_radius
        return np.abs(np.hypot(x - cx, z) - params.curve_radius)

    d = params.intersection_distance_m
    crossing = np.abs(z - d)
    if params.topology == "X-intersection":
        return np.minimum(np.abs(x), crossing)
    # T-intersection: the main road ends at the crossing road
    stem = np.where(z <= d, np.abs(x), np.hypot(x, z - d))
    return np.minimum(stem, crossing)


def render_layout(
    params: LayoutParams, cfg: BevConfig, catalog: Optional[ClassCatalog] = None
) -> BevMap:
    """
    Rasterize a layout into a fully observed one-hot BEV map.

    Args:
        params: Layout parameters
        cfg: BEV grid layout
        catalog: Catalog supplying road, sidewalk and background ids

    Returns:
        BevMap over the catalog's background classes

    Raises:
        LayoutError: If a curve radius does not exceed the lateral extent or
                     no cell ends up as road
    """
    catalog = catalog or default_catalog()
    if params.topology == "curved" and params.curve_radius <= cfg.extent_x_m:
        raise LayoutError(
            f"Curve radius {params.curve_radius:.1f} m must exceed the lateral "
            f"extent {cfg.extent_x_m:.1f} m"
        )

    x, z = cell_centers(cfg)
    psi = math.radians(params.heading_jitter_deg)
    x_local = x * math.cos(psi) - z * math.sin(psi)
    z_local = x * math.sin(psi) + z * math.cos(psi)
    dist = _centerline_distance(params, x_local, z_local)

    half = params.road_half_width
    labels = np.full(cfg.shape, catalog.id_of("background"), dtype=np.int64)
    if params.sidewalk:
        labels[dist <= half + params.sidewalk_width] = catalog.id_of("sidewalk")
    road = dist <= half
    labels[road] = catalog.id_of("road")

    if not road.any():
        raise LayoutError(f"Layout {params.topology} leaves no road cell in the grid")
    return BevMap.from_labels(labels, catalog.background_ids)


def sample_layout_with_params(
    prior: LayoutPrior,
    cfg: BevConfig,
    rng_seed: int,
    catalog: Optional[ClassCatalog] = None,
) -> Tuple[BevMap, LayoutParams]:
    """Sample a layout and return it with the parameters that produced it."""
    rng = np.random.default_rng(rng_seed)
    params = sample_layout_params(prior, cfg, rng)
    logger.debug("Sampled layout %s (seed %d)", params.topology, rng_seed)
    return render_layout(params, cfg, catalog), params


def sample_layout(
    prior: LayoutPrior,
    cfg: BevConfig,
    rng_seed: int,
    catalog: Optional[ClassCatalog] = None,
) -> BevMap:
    """
    Sample a fully observed one-hot road layout.

    The same seed always gives the same map.

    Raises:
        LayoutError: If the sampled parameters leave no road cell
    """
    return sample_layout_with_params(prior, cfg, rng_seed, catalog)[0]


def sample_layouts(
    prior: LayoutPrior,
    cfg: BevConfig,
    seeds: Sequence[int],
    catalog: Optional[ClassCatalog] = None,
) -> List[BevMap]:
    """One layout per seed."""
    return [sample_layout(prior, cfg, seed, catalog) for seed in seeds]


def _with_object_channels(base: BevMap, catalog: ClassCatalog) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Base data laid out over background followed by foreground channels."""
    ids = tuple(sorted(set(base.class_ids) | set(catalog.foreground_ids)))
    data = np.zeros(base.shape + (len(ids),), dtype=np.float64)
    for channel, class_id in enumerate(base.class_ids):
        data[..., ids.index(class_id)] = base.data[..., channel]
    return data, ids


def render_objects(
    base: BevMap,
    objects: Sequence[ObjectSpec],
    cfg: BevConfig,
    catalog: Optional[ClassCatalog] = None,
) -> BevMap:
    """
    Draw object rectangles over a fully observed BEV map.

    Object cells become one-hot in the object's class; later objects win
    where rectangles overlap. Objects entirely outside the grid are logged
    and skipped.

    Args:
        base: Fully observed map
        objects: Footprints in drawing order
        cfg: BEV grid layout
        catalog: Catalog supplying the foreground ids

    Returns:
        BevMap over the base channels plus the foreground classes

    Raises:
        ValidationError: If base is not fully observed or an object class is
                         not a foreground class
    """
    catalog = catalog or default_catalog()
    if base.shape != cfg.shape:
        raise ValidationError(f"Base map {base.shape} does not match grid {cfg.shape}")
    if not base.is_fully_observed():
        raise ValidationError("render_objects needs a fully observed base map")

    data, ids = _with_object_channels(base, catalog)
    for obj in objects:
        if obj.class_id not in catalog.foreground_ids:
            raise ValidationError(f"Object class {obj.class_id} is not a foreground class")
        try:
            rect = rect_from_metric(obj.center_x, obj.center_z, obj.length, obj.width, cfg)
        except OutOfExtentError as exc:
            logger.warning("Skipping object: %s", exc)
            continue
        block = data[rect.row_min : rect.row_max + 1, rect.col_min : rect.col_max + 1]
        block[...] = 0.0
        block[..., ids.index(obj.class_id)] = 1.0

    return BevMap.from_grid(SemanticGrid(data, ids))


def sample_objects(
    base: BevMap,
    cfg: BevConfig,
    rng: np.random.Generator,
    count: int,
    prior: BoxPrior = BoxPrior(),
    catalog: Optional[ClassCatalog] = None,
) -> List[ObjectSpec]:
    """
    Place car-sized footprints centered on random road cells.

    Returns:
        Up to count objects (none when the map has no road)
    """
    catalog = catalog or default_catalog()
    labels = argmax_labels(base.grid, catalog).labels
    rows, cols = np.nonzero(labels == catalog.id_of("road"))
    if rows.size == 0 or count <= 0:
        return []
    picks = rng.choice(rows.size, size=min(count, rows.size), replace=False)
    x, z = cell_center(rows[picks], cols[picks], cfg)
    car = catalog.id_of("car")
    return [
        ObjectSpec(
            center_x=float(xi),
            center_z=float(zi),
            length=prior.length,
            width=prior.width,
            class_id=car,
        )
        for xi, zi in zip(np.atleast_1d(x), np.atleast_1d(z))
    ]
