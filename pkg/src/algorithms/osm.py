"""
OpenStreetMap ingestion and rasterization.

Parses the node/way/tag subset of OSM XML into a RoadGraph and renders it as
a BEV map for a GPS pose: a local equirectangular projection about the pose,
rotated so the heading points up the grid, with every way stroked at its
class width.
"""

import logging
import math
import xml.etree.ElementTree as ET
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.algorithms.projection import cell_centers
from src.data_structures.catalog import ClassCatalog, default_catalog
from src.data_structures.geometry import BevConfig, GeoPose
from src.data_structures.grids import BevMap
from src.data_structures.road_graph import EARTH_RADIUS_M, OsmNode, OsmWay, RoadGraph
from src.utils.errors import OsmParseError, ValidationError

logger = logging.getLogger(__name__)

SIDEWALK_HIGHWAYS = frozenset({"footway", "path", "pedestrian", "steps"})


class WidthDefaults(BaseModel):
    """
    Stroke widths used when OSM tags carry none.

    Attributes:
        lane_width: Meters per lane
        default_lanes: Lanes assumed without a lanes tag
        sidewalk_width: Width of sidewalk strips and footways
    """

    model_config = ConfigDict(frozen=True)

    lane_width: float = Field(default=3.5, gt=0)
    default_lanes: int = Field(default=2, ge=1)
    sidewalk_width: float = Field(default=2.0, gt=0)


def _is_mapped_way(tags: Dict[str, str]) -> bool:
    return "highway" in tags or "footway" in tags


def parse_osm(xml_text: str) -> RoadGraph:
    """
    Parse OSM XML (v0.6 subset) into a road graph.

    Only ways tagged highway=* or footway=* are kept, along with the nodes
    they reference; everything else is dropped.

    Args:
        xml_text: OSM document

    Returns:
        RoadGraph (possibly empty)

    Raises:
        OsmParseError: On malformed XML, bad node coordinates, a kept way
                       with fewer than 2 nodes, or a dangling node reference
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise OsmParseError(f"Malformed OSM XML: {exc}") from exc

    nodes: Dict[int, OsmNode] = {}
    for element in root.iter("node"):
        try:
            node = OsmNode(
                id=int(element.attrib["id"]),
                lat=float(element.attrib["lat"]),
                lon=float(element.attrib["lon"]),
            )
        except (KeyError, ValueError) as exc:
            raise OsmParseError(f"Node element without valid id/lat/lon: {exc}") from exc
        nodes[node.id] = node

    graph = RoadGraph()
    dropped = 0
    for element in root.iter("way"):
        tags = {
            tag.attrib.get("k", ""): tag.attrib.get("v", "") for tag in element.iter("tag")
        }
        if not _is_mapped_way(tags):
            dropped += 1
            continue
        try:
            way_id = int(element.attrib["id"])
            refs = tuple(int(nd.attrib["ref"]) for nd in element.iter("nd"))
        except (KeyError, ValueError) as exc:
            raise OsmParseError(f"Way element without valid id/refs: {exc}") from exc

        missing = [r for r in refs if r not in nodes]
        if missing:
            raise OsmParseError(f"Way {way_id} references missing nodes {missing}")
        if len(refs) < 2:
            raise OsmParseError(f"Way {way_id} has fewer than 2 nodes")

        for ref in refs:
            graph.add_node(nodes[ref])
        try:
            graph.add_way(OsmWay(way_id, refs, tags))
        except ValidationError as exc:
            raise OsmParseError(str(exc)) from exc

    logger.info(
        "Parsed OSM graph: %d ways kept, %d dropped, %d nodes",
        graph.way_count(),
        dropped,
        graph.node_count(),
    )
    return graph


def local_metric(node: OsmNode, pose: GeoPose) -> Tuple[float, float]:
    """
    Camera-frame (X, Z) of a node in meters.

    Equirectangular projection about the pose, then rotated so the heading
    points along +Z (forward) and +X is to the right.
    """
    lat0 = math.radians(pose.lat)
    north = EARTH_RADIUS_M * math.radians(node.lat - pose.lat)
    east = EARTH_RADIUS_M * math.cos(lat0) * math.radians(node.lon - pose.lon)
    psi = math.radians(pose.heading_deg)
    z = north * math.cos(psi) + east * math.sin(psi)
    x = east * math.cos(psi) - north * math.sin(psi)
    return x, z


def _parse_meters(value: Optional[str]) -> Optional[float]:
    if not value:
        return None
    try:
        width = float(value.replace("m", "").strip())
    except ValueError:
        return None
    return width if width > 0 else None


def road_width(way: OsmWay, widths: WidthDefaults) -> float:
    """Width tag if valid, otherwise lanes (tag or default) times the lane width."""
    tagged = _parse_meters(way.tags.get("width"))
    if tagged is not None:
        return tagged
    try:
        lanes = max(1, int(way.tags.get("lanes", "")))
    except ValueError:
        lanes = widths.default_lanes
    return lanes * widths.lane_width


def is_sidewalk_way(way: OsmWay) -> bool:
    return way.highway in SIDEWALK_HIGHWAYS or way.tags.get("footway") == "sidewalk"


def _segment_distance(
    x: np.ndarray, z: np.ndarray, a: Tuple[float, float], b: Tuple[float, float]
) -> Tuple[np.ndarray, np.ndarray]:
    """Distance of points to segment ab and the side (+1 left, -1 right)."""
    ax, az = a
    dx, dz = b[0] - ax, b[1] - az
    length_sq = dx * dx + dz * dz
    px, pz = x - ax, z - az
    if length_sq == 0:
        t = np.zeros_like(x)
    else:
        t = np.clip((px * dx + pz * dz) / length_sq, 0.0, 1.0)
    dist = np.hypot(px - t * dx, pz - t * dz)
    side = np.sign(dx * pz - dz * px)
    return dist, side


def rasterize_osm(
    graph: RoadGraph,
    pose: GeoPose,
    cfg: BevConfig,
    widths: WidthDefaults = WidthDefaults(),
    catalog: Optional[ClassCatalog] = None,
) -> BevMap:
    """
    Render a road graph as a fully observed BEV map around a pose.

    A cell is covered by a way when its center lies within half the stroke
    width of one of the way's segments. Sidewalks (footways and sidewalk
    strips from sidewalk=both|left|right) are drawn first and roads on top.

    Args:
        graph: Parsed road graph (may be empty)
        pose: GPS position and heading of the camera
        cfg: BEV grid layout
        widths: Default stroke widths
        catalog: Catalog supplying road, sidewalk and background ids

    Returns:
        One-hot BevMap over the background classes
    """
    catalog = catalog or default_catalog()
    x, z = cell_centers(cfg)
    sidewalk = np.zeros(cfg.shape, dtype=bool)
    road = np.zeros(cfg.shape, dtype=bool)

    positions = {node.id: local_metric(node, pose) for node in graph.nodes}
    for way in graph.ways:
        points = [positions[n] for n in way.node_ids]
        if is_sidewalk_way(way):
            half, flank, side_mode = widths.sidewalk_width / 2.0, None, None
        else:
            half = road_width(way, widths) / 2.0
            side_mode = way.tags.get("sidewalk")
            flank = widths.sidewalk_width if side_mode in ("both", "left", "right") else None

        for a, b in zip(points, points[1:]):
            dist, side = _segment_distance(x, z, a, b)
            covered = dist <= half
            if flank is None:
                if is_sidewalk_way(way):
                    sidewalk |= covered
                else:
                    road |= covered
                continue
            road |= covered
            strip = (dist > half) & (dist <= half + flank)
            if side_mode == "left":
                strip &= side > 0
            elif side_mode == "right":
                strip &= side < 0
            sidewalk |= strip

    labels = np.full(cfg.shape, catalog.id_of("background"), dtype=np.int64)
    labels[sidewalk] = catalog.id_of("sidewalk")
    labels[road] = catalog.id_of("road")
    logger.info(
        "Rasterized %d ways: %d road cells, %d sidewalk cells",
        graph.way_count(),
        int(road.sum()),
        int((sidewalk & ~road).sum()),
    )
    return BevMap.from_labels(labels, catalog.background_ids)
