"""
Unit tests for the road graph, OSM parsing and OSM rasterization.
"""
import math

import numpy as np
import pytest

from src.algorithms.osm import (
    WidthDefaults,
    is_sidewalk_way,
    local_metric,
    parse_osm,
    rasterize_osm,
    road_width,
)
from src.data_structures.geometry import GeoPose
from src.data_structures.grids import argmax_labels
from src.data_structures.road_graph import EARTH_RADIUS_M, OsmNode, OsmWay, RoadGraph, haversine_m
from src.utils.errors import OsmParseError, ValidationError

# 0.0002 degrees of latitude
STEP_M = EARTH_RADIUS_M * math.radians(0.0002)


def _doc(body: str) -> str:
    return f'<osm version="0.6">{body}</osm>'


class TestRoadGraph:
    """Test the road graph container."""

    @pytest.fixture
    def graph(self):
        graph = RoadGraph()
        for node_id, lat in ((1, 48.0), (2, 48.0002), (3, 48.0004)):
            graph.add_node(OsmNode(node_id, lat, 11.0))
        graph.add_node(OsmNode(4, 48.0002, 11.0003))
        graph.add_way(OsmWay(10, (1, 2, 3), {"highway": "primary"}))
        graph.add_way(OsmWay(11, (2, 4), {"highway": "service"}))
        return graph

    def test_counts(self, graph):
        """Test node, way and edge counts."""
        assert graph.node_count() == 4
        assert graph.way_count() == 2
        assert graph.edge_count() == 3
        assert not graph.is_empty()

    def test_edge_lengths(self, graph):
        """Test segments carry their great-circle length."""
        assert graph.neighbors(1)[2] == pytest.approx(STEP_M)
        assert graph.total_length_m() == pytest.approx(2 * STEP_M + haversine_m(graph.node(2), graph.node(4)))

    def test_intersections(self, graph):
        """Test a node joining three segments is an intersection."""
        assert graph.degree(2) == 3
        assert graph.intersection_nodes() == [2]

    def test_edges_listed_once(self, graph):
        """Test each undirected edge appears with the smaller id first."""
        assert sorted((a, b) for a, b, _ in graph.edges()) == [(1, 2), (2, 3), (2, 4)]

    def test_invalid_ways(self, graph):
        """Test short ways and unknown nodes are rejected."""
        with pytest.raises(ValidationError):
            graph.add_way(OsmWay(12, (1,), {}))
        with pytest.raises(ValidationError):
            graph.add_way(OsmWay(13, (1, 99), {}))

    def test_missing_node(self, graph):
        """Test looking up an unknown node."""
        with pytest.raises(KeyError):
            graph.node(99)
        with pytest.raises(KeyError):
            graph.neighbors(99)


class TestParseOsm:
    """Test OSM XML parsing."""

    def test_sample_file(self, osm_text):
        """Test road and footway ways are kept and the building is dropped."""
        graph = parse_osm(osm_text)
        assert sorted(w.id for w in graph.ways) == [100, 101, 102]
        assert graph.node_count() == 8
        assert not graph.has_node(10)
        assert graph.intersection_nodes() == [1]

    def test_tags_survive(self, osm_text):
        """Test way tags are available after parsing."""
        ways = {w.id: w for w in parse_osm(osm_text).ways}
        assert ways[100].highway == "primary"
        assert ways[100].tags["lanes"] == "2"
        assert is_sidewalk_way(ways[102])
        assert not is_sidewalk_way(ways[101])

    def test_empty_document(self):
        """Test a document without ways gives an empty graph."""
        assert parse_osm(_doc("")).is_empty()

    def test_malformed_xml(self):
        """Test broken XML."""
        with pytest.raises(OsmParseError):
            parse_osm("<osm><node")

    def test_dangling_reference(self):
        """Test a road way pointing at a missing node."""
        body = '<node id="1" lat="0" lon="0"/><way id="5"><nd ref="1"/><nd ref="2"/><tag k="highway" v="service"/></way>'
        with pytest.raises(OsmParseError):
            parse_osm(_doc(body))

    def test_single_node_way(self):
        """Test a road way with one node."""
        body = '<node id="1" lat="0" lon="0"/><way id="5"><nd ref="1"/><tag k="highway" v="service"/></way>'
        with pytest.raises(OsmParseError):
            parse_osm(_doc(body))

    def test_bad_coordinates(self):
        """Test a node with a non-numeric latitude."""
        with pytest.raises(OsmParseError):
            parse_osm(_doc('<node id="1" lat="north" lon="0"/>'))

    def test_untagged_way_is_ignored(self):
        """Test ways without highway or footway tags are skipped even if broken."""
        body = '<way id="5"><nd ref="42"/></way>'
        assert parse_osm(_doc(body)).is_empty()


class TestLocalMetric:
    """Test the pose-relative projection."""

    def test_north_is_forward(self):
        """Test a node due north lies straight ahead for heading 0."""
        x, z = local_metric(OsmNode(1, 48.0002, 11.0), GeoPose(lat=48.0, lon=11.0, heading_deg=0.0))
        assert x == pytest.approx(0.0, abs=1e-9)
        assert z == pytest.approx(STEP_M)

    def test_heading_east(self):
        """Test facing east puts north on the left and east ahead."""
        pose = GeoPose(lat=48.0, lon=11.0, heading_deg=90.0)
        x, z = local_metric(OsmNode(1, 48.0002, 11.0), pose)
        assert x == pytest.approx(-STEP_M)
        assert z == pytest.approx(0.0, abs=1e-9)
        x, z = local_metric(OsmNode(2, 48.0, 11.0003), pose)
        expected = EARTH_RADIUS_M * math.cos(math.radians(48.0)) * math.radians(0.0003)
        assert z == pytest.approx(expected)


class TestRoadWidth:
    """Test stroke widths from tags."""

    @pytest.mark.parametrize(
        "tags, expected",
        [
            ({"width": "6"}, 6.0),
            ({"width": "5 m"}, 5.0),
            ({"lanes": "3"}, 10.5),
            ({}, 7.0),
            ({"width": "wide", "lanes": "1"}, 3.5),
            ({"lanes": "many"}, 7.0),
        ],
    )
    def test_width(self, tags, expected):
        """Test width tag, lanes tag and defaults."""
        assert road_width(OsmWay(1, (1, 2), tags), WidthDefaults()) == expected


class TestRasterizeOsm:
    """Test rendering the sample intersection."""

    @pytest.fixture
    def labels(self, osm_text, bev_cfg, catalog):
        pose = GeoPose(lat=47.9998, lon=11.0, heading_deg=0.0)
        bev = rasterize_osm(parse_osm(osm_text), pose, bev_cfg, catalog=catalog)
        assert bev.is_fully_observed()
        assert bev.class_ids == catalog.background_ids
        return argmax_labels(bev.grid, catalog).labels

    def test_main_road(self, labels, catalog):
        """Test the 7 m primary road covers columns 25..38 near the camera."""
        road = np.nonzero(labels[120] == catalog.id_of("road"))[0]
        assert road.tolist() == list(range(25, 39))

    def test_footway(self, labels, catalog):
        """Test the sidewalk footway 8.9 m to the right covers columns 49..52."""
        sidewalk = np.nonzero(labels[120] == catalog.id_of("sidewalk"))[0]
        assert sidewalk.tolist() == [49, 50, 51, 52]

    def test_crossing_road(self, labels, catalog):
        """Test the 6 m crossing road about 22 m ahead spans every column."""
        crossing = np.nonzero((labels == catalog.id_of("road")).all(axis=1))[0]
        assert crossing.tolist() == list(range(74, 87))

    def test_background_elsewhere(self, labels, catalog):
        """Test cells away from every way are background."""
        assert labels[120, 0] == catalog.id_of("background")
        assert labels[10, 63] == catalog.id_of("background")

    def test_heading_rotates_map(self, osm_text, bev_cfg, catalog):
        """Test facing east at the crossing turns the residential road forward."""
        pose = GeoPose(lat=48.0, lon=11.0, heading_deg=90.0)
        labels = argmax_labels(rasterize_osm(parse_osm(osm_text), pose, bev_cfg, catalog=catalog).grid, catalog).labels
        road = np.nonzero(labels[100] == catalog.id_of("road"))[0]
        assert road.tolist() == list(range(26, 38))

    def test_empty_graph(self, bev_cfg, catalog):
        """Test an empty graph renders background only."""
        bev = rasterize_osm(RoadGraph(), GeoPose(lat=0.0, lon=0.0, heading_deg=0.0), bev_cfg, catalog=catalog)
        assert (bev.data[..., catalog.background_ids.index(catalog.id_of("background"))] == 1.0).all()

    def test_one_sided_sidewalk(self, bev_cfg, catalog):
        """Test sidewalk=right draws a strip on the right of the travel direction only."""
        graph = RoadGraph()
        graph.add_node(OsmNode(1, 48.0, 11.0))
        graph.add_node(OsmNode(2, 48.0006, 11.0))
        graph.add_way(OsmWay(7, (1, 2), {"highway": "residential", "width": "4", "sidewalk": "right"}))
        pose = GeoPose(lat=48.0, lon=11.0, heading_deg=0.0)
        labels = argmax_labels(rasterize_osm(graph, pose, bev_cfg, catalog=catalog).grid, catalog).labels
        sidewalk = np.nonzero(labels[100] == catalog.id_of("sidewalk"))[0]
        assert sidewalk.tolist() == [36, 37, 38, 39, 40]
