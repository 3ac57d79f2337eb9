"""
Plotting helpers for BEV maps, optimizer traces and road graphs.

Figures are plotly; the road graph is an interactive PyVis network.
"""

from typing import Dict, Optional

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from src.algorithms.osm import is_sidewalk_way, local_metric
from src.data_structures.catalog import ClassCatalog, default_catalog
from src.data_structures.geometry import GeoPose
from src.data_structures.grids import BevMap, LabelGrid, argmax_labels
from src.data_structures.road_graph import RoadGraph

try:
    from pyvis.network import Network

    PYVIS_AVAILABLE = True
except ImportError:
    PYVIS_AVAILABLE = False

CLASS_COLORS: Dict[str, str] = {
    "road": "#5a5a5a",
    "sidewalk": "#f4a3c8",
    "background": "#6bbf59",
    "car": "#1f4fd8",
    "person": "#e6382f",
    "unknown": "#111111",
}
FALLBACK_COLOR = "#ffffff"

# Pixels per meter when laying out graph nodes from a pose
NODE_SCALE = 8.0


def _hex_to_rgb(color: str) -> np.ndarray:
    color = color.lstrip("#")
    return np.array([int(color[i : i + 2], 16) for i in (0, 2, 4)], dtype=np.uint8)


def label_rgb(labels: LabelGrid, catalog: Optional[ClassCatalog] = None) -> np.ndarray:
    """(H, W, 3) uint8 image with one color per class."""
    catalog = catalog or default_catalog()
    rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
    rgb[:] = _hex_to_rgb(FALLBACK_COLOR)
    for class_id in catalog.all_ids:
        color = CLASS_COLORS.get(catalog.name_of(class_id), FALLBACK_COLOR)
        rgb[labels.labels == class_id] = _hex_to_rgb(color)
    return rgb


def label_figure(
    labels: LabelGrid, catalog: Optional[ClassCatalog] = None, title: str = ""
) -> go.Figure:
    fig = px.imshow(label_rgb(labels, catalog), title=title)
    fig.update_layout(height=500, margin={"l": 10, "r": 10, "t": 40, "b": 10})
    fig.update_xaxes(showticklabels=False)
    fig.update_yaxes(showticklabels=False)
    return fig


def bev_figure(bev: BevMap, catalog: Optional[ClassCatalog] = None, title: str = "") -> go.Figure:
    """Argmax labels of a BEV map, unobserved cells drawn as unknown."""
    catalog = catalog or default_catalog()
    labels = argmax_labels(bev.grid, catalog)
    return label_figure(labels, catalog, title)


def trace_figure(trace: pd.DataFrame, value: str = "objective", title: str = "") -> go.Figure:
    """Objective per iteration, one line per restart when the trace has restarts."""
    frame = trace.reset_index(drop=True)
    if "restart" in frame.columns:
        frame = frame.assign(record=frame.groupby("restart").cumcount())
        x, color = "record", "restart"
    else:
        x, color = ("step" if "step" in frame.columns else frame.index), None
    fig = px.line(frame, x=x, y=value, color=color, title=title or f"{value} per iteration")
    fig.update_layout(height=400)
    return fig


def lambda_sweep_figure(sweep: pd.DataFrame) -> go.Figure:
    """Final masked MSE per lambda; lambdas are categories so 0 stays visible."""
    frame = sweep.assign(lambda_label=sweep["lambda"].map(lambda v: f"{v:g}"))
    fig = px.line(frame, x="lambda_label", y="masked_mse", markers=True,
                  title="Masked reconstruction error vs lambda",
                  labels={"lambda_label": "lambda"})
    fig.update_layout(height=400)
    return fig


def road_graph_network(
    graph: RoadGraph,
    pose: Optional[GeoPose] = None,
    physics_enabled: bool = False,
):
    """
    Interactive PyVis view of a road graph.

    Args:
        graph: Parsed road graph
        pose: When given, nodes are pinned at their local metric position
              (forward up, right to the right); otherwise physics lays them out
        physics_enabled: Force-directed layout for unpinned views

    Returns:
        pyvis Network, or None when PyVis is unavailable or the graph is empty
    """
    if not PYVIS_AVAILABLE or graph.is_empty():
        return None

    net = Network(height="700px", width="100%", bgcolor="#1a1a2e", font_color="white")
    intersections = set(graph.intersection_nodes())
    connected = {n for a, b, _ in graph.edges() for n in (a, b)}

    for node in graph.nodes:
        if node.id not in connected:
            continue
        degree = graph.degree(node.id)
        options = {
            "label": str(node.id) if node.id in intersections else " ",
            "title": f"node {node.id}\n{node.lat:.6f}, {node.lon:.6f}\nDegree: {degree}",
            "size": 10 if node.id in intersections else 4,
            "color": "#ffb74d" if node.id in intersections else "#4fc3f7",
        }
        if pose is not None:
            x, z = local_metric(node, pose)
            options.update(x=x * NODE_SCALE, y=-z * NODE_SCALE, physics=False)
        net.add_node(node.id, **options)

    for way in graph.ways:
        sidewalk = is_sidewalk_way(way)
        for a, b in zip(way.node_ids, way.node_ids[1:]):
            if a == b:
                continue
            length = graph.neighbors(a)[b]
            net.add_edge(
                a,
                b,
                title=f"way {way.id} ({way.highway or 'footway'})\n{length:.1f} m",
                width=1 if sidewalk else 3,
                color=CLASS_COLORS["sidewalk"] if sidewalk else "#bdbdbd",
            )

    net.toggle_physics(physics_enabled and pose is None)
    return net
