"""
Road graph parsed from OpenStreetMap data.
Nodes are GPS points; ways are ordered node sequences with OSM tags; edges
join consecutive way nodes and carry their segment length.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from src.utils.errors import ValidationError

EARTH_RADIUS_M = 6378137.0


@dataclass(frozen=True)
class OsmNode:
    """A GPS point."""

    id: int
    lat: float
    lon: float


@dataclass(frozen=True)
class OsmWay:
    """An ordered polyline of node ids plus its tags."""

    id: int
    node_ids: Tuple[int, ...]
    tags: Dict[str, str] = field(default_factory=dict)

    @property
    def highway(self) -> str:
        return self.tags.get("highway", "")


def haversine_m(a: OsmNode, b: OsmNode) -> float:
    """Great-circle distance between two nodes in meters."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


class RoadGraph:
    """
    Undirected road network.

    Uses an adjacency list {node_id: {neighbor_id: length_m}} next to the
    node and way tables. Every way node resolves and every way has at least
    two nodes.

    Time Complexity:
        - add_node: O(1)
        - add_way: O(n) for n way nodes
        - neighbors, degree: O(1)

    Space Complexity: O(V + E)
    """

    def __init__(self):
        self._nodes: Dict[int, OsmNode] = {}
        self._ways: Dict[int, OsmWay] = {}
        self._adjacency_list: Dict[int, Dict[int, float]] = {}

    def add_node(self, node: OsmNode) -> None:
        """
        Add a node; re-adding the same id replaces its position.
        """
        self._nodes[node.id] = node
        self._adjacency_list.setdefault(node.id, {})

    def add_way(self, way: OsmWay) -> None:
        """
        Add a way and connect its consecutive nodes.

        Raises:
            ValidationError: If the way has fewer than 2 nodes or references
                             a node not in the graph
        """
        if len(way.node_ids) < 2:
            raise ValidationError(f"Way {way.id} has fewer than 2 nodes")
        missing = [n for n in way.node_ids if n not in self._nodes]
        if missing:
            raise ValidationError(f"Way {way.id} references unknown nodes {missing}")

        self._ways[way.id] = way
        for a, b in zip(way.node_ids, way.node_ids[1:]):
            if a == b:
                continue
            length = haversine_m(self._nodes[a], self._nodes[b])
            self._adjacency_list[a][b] = length
            self._adjacency_list[b][a] = length

    def has_node(self, node_id: int) -> bool:
        return node_id in self._nodes

    def node(self, node_id: int) -> OsmNode:
        """
        Raises:
            KeyError: If the node does not exist
        """
        if node_id not in self._nodes:
            raise KeyError(f"Node {node_id} not found in graph")
        return self._nodes[node_id]

    @property
    def nodes(self) -> List[OsmNode]:
        return list(self._nodes.values())

    @property
    def ways(self) -> List[OsmWay]:
        return list(self._ways.values())

    def neighbors(self, node_id: int) -> Dict[int, float]:
        """Neighbor ids with segment lengths in meters."""
        if node_id not in self._adjacency_list:
            raise KeyError(f"Node {node_id} not found in graph")
        return self._adjacency_list[node_id].copy()

    def degree(self, node_id: int) -> int:
        return len(self.neighbors(node_id))

    def edges(self) -> List[Tuple[int, int, float]]:
        """Each undirected edge once, as (smaller id, larger id, length)."""
        return [
            (a, b, length)
            for a, adj in self._adjacency_list.items()
            for b, length in adj.items()
            if a < b
        ]

    def intersection_nodes(self) -> List[int]:
        """Nodes where three or more segments meet."""
        return sorted(n for n, adj in self._adjacency_list.items() if len(adj) >= 3)

    def node_count(self) -> int:
        return len(self._nodes)

    def way_count(self) -> int:
        return len(self._ways)

    def edge_count(self) -> int:
        return sum(len(adj) for adj in self._adjacency_list.values()) // 2

    def total_length_m(self) -> float:
        return sum(length for _, _, length in self.edges())

    def is_empty(self) -> bool:
        return not self._ways

    def __repr__(self) -> str:
        return (
            f"RoadGraph(nodes={self.node_count()}, ways={self.way_count()}, "
            f"edges={self.edge_count()})"
        )
