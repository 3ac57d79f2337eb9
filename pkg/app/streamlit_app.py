"""
BEV Mapping Explorer - Streamlit viewer
Synthetic scenes, simulator layouts, OSM alignment and road graphs
"""

import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import streamlit as st
import streamlit.components.v1 as components

# Repository root on the path for the src package
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.algorithms.align import align_osm
from src.algorithms.osm import parse_osm, rasterize_osm
from src.algorithms.simulator import LayoutParams, TOPOLOGIES, render_layout, sample_layout_with_params
from src.algorithms.warp import BoxParams, FlowField, WarpParams, compose_and_warp, warp_grid
from src.analysis.pipeline import demo_synthetic
from src.data_structures.geometry import BevConfig, GeoPose
from src.data_structures.grids import BevMap, SemanticGrid, normalize_cells
from src.utils.config import AlignConfig, PipelineConfig
from src.utils.grid_io import load_bev, load_grid
from src.visualization.bev_plots import (
    PYVIS_AVAILABLE,
    bev_figure,
    label_figure,
    road_graph_network,
    trace_figure,
)

SAMPLE_OSM = Path(__file__).parent.parent / "data" / "sample" / "intersection.osm"

# Page configuration
st.set_page_config(page_title="BEV Mapping Explorer", layout="wide")


@st.cache_data
def run_demo(seed: int):
    """Run and cache one synthetic demo scene."""
    with tempfile.TemporaryDirectory() as tmp:
        report = demo_synthetic(seed, PipelineConfig(), tmp)
        b_init = load_bev(Path(tmp) / "b_init.prob")
        b_refined = load_bev(Path(tmp) / "b_refined.prob")
        truth = load_grid(Path(tmp) / "truth.pgm")
    return report, b_init, b_refined, truth


@st.cache_data
def load_osm_text(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def show_network(net) -> None:
    """Render a PyVis network inside the page."""
    with tempfile.NamedTemporaryFile(delete=False, suffix=".html", mode="w") as tmp:
        net.save_graph(tmp.name)
    with open(tmp.name, "r") as f:
        components.html(f.read(), height=700, scrolling=False)
    os.unlink(tmp.name)


def demo_tab(seed: int) -> None:
    st.header("Synthetic Scene")
    report, b_init, b_refined, truth = run_demo(seed)

    col1, col2, col3 = st.columns(3)
    col1.metric("Topology", report["topology"])
    col2.metric("IoU (initial)", f"{report['iou_init']:.3f}")
    col3.metric("IoU (refined)", f"{report['iou_refined']:.3f}")

    col1, col2, col3 = st.columns(3)
    with col1:
        st.plotly_chart(label_figure(truth, title="Ground truth"), use_container_width=True)
    with col2:
        st.plotly_chart(bev_figure(b_init, title="Projected (B_init)"), use_container_width=True)
    with col3:
        st.plotly_chart(bev_figure(b_refined, title="Refined"), use_container_width=True)


def simulator_tab(cfg: BevConfig) -> None:
    st.header("Layout Simulator")
    col1, col2 = st.columns([1, 2])
    with col1:
        topology = st.selectbox("Topology", TOPOLOGIES)
        lanes = st.slider("Lanes per direction", 1, 3, 1)
        lane_width = st.slider("Lane width (m)", 2.5, 3.5, 3.0, 0.1)
        sidewalk = st.checkbox("Sidewalk", value=True)
        jitter = st.slider("Heading jitter (deg)", -15.0, 15.0, 0.0, 0.5)
        radius = st.slider("Curve radius (m)", 40.0, 150.0, 60.0, 5.0)
        distance = st.slider("Intersection distance (m)", 15.0, 45.0, 30.0, 1.0)
    params = LayoutParams(
        topology=topology,
        lanes_per_direction=lanes,
        lane_width=lane_width,
        sidewalk=sidewalk,
        heading_jitter_deg=jitter,
        curve_radius=radius if topology == "curved" else None,
        intersection_distance_m=distance,
    )
    with col2:
        try:
            layout = render_layout(params, cfg)
        except ValueError as exc:
            st.error(str(exc))
            return
        st.plotly_chart(bev_figure(layout, title=topology), use_container_width=True)


def alignment_tab(cfg: BevConfig, seed: int) -> None:
    st.header("OSM Alignment")
    st.markdown("A simulator layout is displaced by a known box warp, then recovered.")
    col1, col2 = st.columns([1, 3])
    with col1:
        tx = st.slider("Shift rows", -6.0, 6.0, 3.0, 0.5)
        ty = st.slider("Shift cols", -6.0, 6.0, -2.0, 0.5)
        rotation = st.slider("Rotation (rad)", -0.2, 0.2, 0.05, 0.01)
        iters = st.slider("Iterations", 20, 300, 100, 10)
    align_cfg = AlignConfig(warp_mode="box", lambda2=0.0, lambda3=1e-4, max_iters=iters, restarts=0)

    b_osm, _ = sample_layout_with_params(PipelineConfig().prior, cfg, seed)
    truth = WarpParams(
        BoxParams(tx, ty, rotation, 0.0), FlowField.zeros(align_cfg.flow_rows, align_cfg.flow_cols)
    )
    warped = warp_grid(b_osm.grid, truth)
    data = np.where(warped.mass()[..., None] >= 1.0 - 1e-9, warped.data, 0.0)
    b_init = BevMap.from_grid(normalize_cells(SemanticGrid(data, warped.class_ids)))

    result = align_osm(b_init, b_osm, align_cfg)
    aligned = compose_and_warp(b_osm, result.params)

    with col2:
        c1, c2, c3 = st.columns(3)
        c1.plotly_chart(bev_figure(b_osm, title="OSM raster"), use_container_width=True)
        c2.plotly_chart(bev_figure(b_init, title="Observed"), use_container_width=True)
        c3.plotly_chart(bev_figure(aligned, title="Aligned OSM"), use_container_width=True)
        st.plotly_chart(trace_figure(result.trace), use_container_width=True)
        recovered = result.params.box
        st.dataframe(
            pd.DataFrame(
                {
                    "parameter": ["tx", "ty", "rotation"],
                    "true": [tx, ty, rotation],
                    "recovered": [recovered.tx, recovered.ty, recovered.rotation],
                }
            ),
            hide_index=True,
        )


def road_graph_tab(cfg: BevConfig) -> None:
    st.header("Road Graph")
    if not SAMPLE_OSM.exists():
        st.error(f"Sample OSM file not found at {SAMPLE_OSM}")
        return
    graph = parse_osm(load_osm_text(str(SAMPLE_OSM)))
    col1, col2 = st.columns([1, 3])
    with col1:
        lat = st.number_input("Latitude", value=47.99985, format="%.6f")
        lon = st.number_input("Longitude", value=11.0, format="%.6f")
        heading = st.slider("Heading (deg)", -180.0, 180.0, 0.0, 1.0)
        st.info(f"{graph.node_count()} nodes, {graph.way_count()} ways, {graph.edge_count()} edges")
    pose = GeoPose(lat=lat, lon=lon, heading_deg=heading)
    with col2:
        st.plotly_chart(bev_figure(rasterize_osm(graph, pose, cfg), title="Rasterized OSM"), use_container_width=True)
        if PYVIS_AVAILABLE:
            net = road_graph_network(graph, pose)
            if net:
                show_network(net)
        else:
            st.warning("PyVis not installed. Run: `pip install pyvis`")


def main():
    """Main application."""
    st.title("BEV Mapping Explorer")
    st.markdown("Occlusion-aware bird's-eye-view maps from a single segmented image")

    st.sidebar.header("Settings")
    seed = st.sidebar.number_input("Seed", min_value=0, value=0, step=1)
    cfg = PipelineConfig().bev
    st.sidebar.info(f"Grid {cfg.k}x{cfg.l} cells, {cfg.extent_z_m:g} m x {cfg.extent_x_m:g} m")

    tab1, tab2, tab3, tab4 = st.tabs(["Synthetic Demo", "Simulator", "OSM Alignment", "Road Graph"])
    with tab1:
        demo_tab(int(seed))
    with tab2:
        simulator_tab(cfg)
    with tab3:
        alignment_tab(cfg, int(seed))
    with tab4:
        road_graph_tab(cfg)


if __name__ == "__main__":
    main()
