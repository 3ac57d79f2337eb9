"""
Synthetic perspective fixtures.

Renders a perspective segmentation and depth map from a BEV ground-truth
layout with a level ground-plane camera: every ground pixel is traced to its
BEV cell, and cars are drawn as upright boxes standing on their near face.
Projecting the result back gives B_init with known ground truth.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from src.algorithms.projection import PixelBox, metric_to_cell_indices
from src.algorithms.simulator import ObjectSpec
from src.data_structures.catalog import ClassCatalog, default_catalog
from src.data_structures.geometry import BevConfig, CameraIntrinsics
from src.data_structures.grids import BevMap, DepthMap, SemanticGrid, argmax_labels
from src.utils.config import SyntheticCamera

logger = logging.getLogger(__name__)

MIN_OBJECT_DEPTH = 0.5


@dataclass(frozen=True)
class SyntheticScene:
    """
    Attributes:
        seg: One-hot perspective segmentation over every catalog class
        depth: Depth along the optical axis; invalid above the horizon
        intrinsics: Camera intrinsics
        boxes: Image boxes of the drawn objects
        objects: The objects behind the boxes, in the same order
    """

    seg: SemanticGrid
    depth: DepthMap
    intrinsics: CameraIntrinsics
    boxes: List[PixelBox]
    objects: List[ObjectSpec]


def camera_intrinsics(camera: SyntheticCamera) -> CameraIntrinsics:
    return CameraIntrinsics(fx=camera.fx, fy=camera.fy, cx=camera.cx, cy=camera.cy)


def _object_box(obj: ObjectSpec, camera: SyntheticCamera) -> Optional[PixelBox]:
    """Image box of an object's near face, or None when it is not in view."""
    z_near = obj.center_z - obj.length / 2.0
    if z_near < MIN_OBJECT_DEPTH:
        return None
    u_left = camera.fx * (obj.center_x - obj.width / 2.0) / z_near + camera.cx
    u_right = camera.fx * (obj.center_x + obj.width / 2.0) / z_near + camera.cx
    v_top = camera.cy + camera.fy * (camera.camera_height - camera.object_height) / z_near
    v_bottom = camera.cy + camera.fy * camera.camera_height / z_near

    x0 = max(0, int(math.floor(u_left)))
    x1 = min(camera.image_width, int(math.ceil(u_right)))
    y0 = max(0, int(math.floor(v_top)))
    y1 = min(camera.image_height, int(math.floor(v_bottom)) + 1)
    if x1 <= x0 or y1 <= y0:
        return None
    return PixelBox(x0, y0, x1, y1)


def fabricate_perspective(
    truth: BevMap,
    objects: Sequence[ObjectSpec],
    camera: SyntheticCamera,
    cfg: BevConfig,
    catalog: Optional[ClassCatalog] = None,
) -> SyntheticScene:
    """
    Render a perspective segmentation/depth pair consistent with a layout.

    Ground pixels below the horizon (v > cy) lie at depth
    Z = fy * camera_height / (v - cy) and take the label of the truth cell
    they fall in (background outside the grid). Pixels at or above the
    horizon are background without depth. Objects are drawn far to near.

    Args:
        truth: Fully observed layout over background classes
        objects: Occluders to draw
        camera: Synthetic camera
        cfg: BEV grid layout of truth
        catalog: Class catalog

    Returns:
        SyntheticScene
    """
    catalog = catalog or default_catalog()
    h, w = camera.image_height, camera.image_width
    truth_labels = argmax_labels(truth.grid, catalog).labels
    background = catalog.id_of("background")

    labels = np.full((h, w), background, dtype=np.int64)
    depth = np.full((h, w), np.nan)

    v = np.arange(h, dtype=np.float64)[:, None]
    u = np.arange(w, dtype=np.float64)[None, :]
    ground = np.broadcast_to(v > camera.cy, (h, w))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(v > camera.cy, camera.fy * camera.camera_height / (v - camera.cy), np.nan)
    z = np.broadcast_to(z, (h, w))
    x = (u - camera.cx) * z / camera.fx

    rows, cols, inside = metric_to_cell_indices(np.nan_to_num(x), np.nan_to_num(z), cfg)
    hit = ground & inside
    labels[hit] = truth_labels[rows[hit], cols[hit]]
    depth[ground] = z[ground]

    drawn_boxes: List[PixelBox] = []
    drawn_objects: List[ObjectSpec] = []
    for obj in sorted(objects, key=lambda o: o.center_z - o.length / 2.0, reverse=True):
        box = _object_box(obj, camera)
        if box is None:
            logger.debug("Object at (%.1f, %.1f) is out of view", obj.center_x, obj.center_z)
            continue
        labels[box.y0 : box.y1, box.x0 : box.x1] = obj.class_id
        depth[box.y0 : box.y1, box.x0 : box.x1] = obj.center_z - obj.length / 2.0
        drawn_boxes.append(box)
        drawn_objects.append(obj)

    seg = SemanticGrid.from_labels(labels, catalog.all_ids)
    return SyntheticScene(
        seg=seg,
        depth=DepthMap.from_array(depth),
        intrinsics=camera_intrinsics(camera),
        boxes=drawn_boxes,
        objects=drawn_objects,
    )
