"""
Foreground masking and random-box sampling.

Foreground pixels (cars, persons) are masked out of the perspective input;
random boxes placed on background evidence create extra masked regions whose
ground truth is still known, which is how hallucination training pairs are
built without annotating occluded areas.
"""

import logging
import re
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.algorithms.projection import PixelBox
from src.data_structures.catalog import ClassCatalog
from src.data_structures.grids import SemanticGrid, argmax_labels
from src.utils.errors import PlacementError, ValidationError

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 1000
MIN_REGION_OVERLAP = 0.5
HORIZON_SCALE = 0.25

_STRATEGY_NAME = re.compile(r"^(none|persp)-(road|bg)-(\d+)-(\d+)$")


@dataclass(frozen=True)
class ForegroundMask:
    """m[i, j] is True iff the argmax class at (i, j) is a foreground class."""

    m: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.m.shape


@dataclass(frozen=True)
class ClassMaskStack:
    """One channel per foreground class; channel sum equals the foreground mask."""

    data: np.ndarray
    class_ids: Tuple[int, ...]


class BoxSamplingStrategy(BaseModel):
    """
    Random-box sampling strategy ("geometry-background class-size-count").

    Attributes:
        geometry: "perspective" shrinks boxes toward the horizon, "none" keeps size
        background_class: Boxes must overlap road pixels ("road") or any
                          background pixels ("bg")
        object_size: Box height in pixels at the bottom image row
        object_count: Number of boxes per image
        horizon_row: Row where perspective boxes reach a quarter of their size
                     (default: a third of the image height)
        aspect_ratio: Box width over height
    """

    model_config = ConfigDict(frozen=True)

    geometry: Literal["none", "perspective"] = "perspective"
    background_class: Literal["road", "bg"] = "bg"
    object_size: int = Field(default=100, gt=0)
    object_count: int = Field(default=5, ge=1)
    horizon_row: Optional[int] = Field(default=None, ge=0)
    aspect_ratio: float = Field(default=1.0, gt=0)

    @classmethod
    def from_name(cls, name: str, **overrides) -> "BoxSamplingStrategy":
        """
        Parse names like "persp-bg-100-5" or "none-road-50-3".

        Raises:
            ValidationError: If the name does not follow the pattern
        """
        match = _STRATEGY_NAME.match(name.strip())
        if not match:
            raise ValidationError(f"Unrecognised sampling strategy name '{name}'")
        geometry, background, size, count = match.groups()
        return cls(
            geometry="perspective" if geometry == "persp" else "none",
            background_class=background,
            object_size=int(size),
            object_count=int(count),
            **overrides,
        )

    @property
    def name(self) -> str:
        geometry = "persp" if self.geometry == "perspective" else "none"
        return f"{geometry}-{self.background_class}-{self.object_size}-{self.object_count}"


@dataclass(frozen=True)
class TrainingPair:
    """
    Masked hallucination input.

    Attributes:
        masked_image: Image with foreground and random boxes filled
        input_mask: Cells filled in masked_image
        loss_mask: Boxed background cells, where ground truth is known
        boxes: The random boxes
        class_masks: Foreground class stack of the input segmentation
    """

    masked_image: np.ndarray
    input_mask: np.ndarray
    loss_mask: np.ndarray
    boxes: List[PixelBox]
    class_masks: ClassMaskStack


def _check_catalog(seg: SemanticGrid, catalog: ClassCatalog) -> None:
    if seg.class_ids != catalog.all_ids:
        raise ValidationError(
            f"Segmentation channels {seg.class_ids} do not match the catalog {catalog.all_ids}"
        )


def foreground_mask(seg: SemanticGrid, catalog: ClassCatalog) -> ForegroundMask:
    """
    Mask of pixels whose argmax class is a foreground class.

    Raises:
        ValidationError: If seg does not carry one channel per catalog class
    """
    _check_catalog(seg, catalog)
    labels = argmax_labels(seg, catalog).labels
    return ForegroundMask(np.isin(labels, catalog.foreground_ids))


def apply_mask(image: np.ndarray, mask: ForegroundMask, fill: float) -> np.ndarray:
    """
    Replace masked pixels with a fill value.

    Args:
        image: Array of shape (h, w) or (h, w, channels)
        mask: Mask of shape (h, w)
        fill: Replacement value (e.g. the mean intensity)

    Returns:
        New array; unmasked pixels are unchanged

    Raises:
        ValidationError: If image and mask sizes differ
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape[:2] != mask.shape:
        raise ValidationError(f"Image {image.shape[:2]} and mask {mask.shape} sizes differ")
    out = image.copy()
    out[mask.m] = fill
    return out


def class_mask_stack(seg: SemanticGrid, catalog: ClassCatalog) -> ClassMaskStack:
    """
    One-hot occupancy per foreground class.

    Raises:
        ValidationError: If seg does not carry one channel per catalog class
    """
    _check_catalog(seg, catalog)
    labels = argmax_labels(seg, catalog).labels
    fg = np.asarray(catalog.foreground_ids)
    data = (labels[..., None] == fg[None, None, :]).astype(np.float64)
    return ClassMaskStack(data, catalog.foreground_ids)


def placement_region(
    seg: SemanticGrid, catalog: ClassCatalog, background_class: str
) -> np.ndarray:
    """Pixels where boxes may be placed: road pixels, or any background pixels."""
    labels = argmax_labels(seg, catalog).labels
    if background_class == "road":
        return labels == catalog.id_of("road")
    return np.isin(labels, catalog.background_ids)


def box_height_at(bottom_row: int, strategy: BoxSamplingStrategy, image_height: int) -> int:
    """
    Box height for a box whose bottom edge is at bottom_row.

    With perspective geometry the height shrinks linearly from object_size at
    the last image row to object_size / 4 at the horizon row; rows above the
    horizon keep the horizon height.
    """
    size = float(strategy.object_size)
    if strategy.geometry == "perspective":
        horizon = _horizon_row(strategy, image_height)
        bottom = image_height - 1
        if bottom > horizon:
            t = np.clip((bottom_row - horizon) / (bottom - horizon), 0.0, 1.0)
        else:
            t = 1.0
        size *= HORIZON_SCALE + (1.0 - HORIZON_SCALE) * t
    return int(max(1, min(image_height, round(size))))


def _horizon_row(strategy: BoxSamplingStrategy, image_height: int) -> int:
    if strategy.horizon_row is not None:
        return min(strategy.horizon_row, image_height - 1)
    return image_height // 3


def sample_random_boxes(
    strategy: BoxSamplingStrategy,
    seg: SemanticGrid,
    rng_seed: int,
    catalog: ClassCatalog,
) -> List[PixelBox]:
    """
    Sample boxes that mostly overlap the strategy's placement region.

    Each box is drawn by rejection sampling until at least half of its area
    lies on the placement region.

    Args:
        strategy: Sampling strategy
        seg: Perspective segmentation (placement evidence)
        rng_seed: Seed; the same seed gives the same boxes
        catalog: Class catalog

    Returns:
        Exactly strategy.object_count boxes

    Raises:
        PlacementError: If a box finds no admissible placement within
                        MAX_PLACEMENT_ATTEMPTS attempts
    """
    _check_catalog(seg, catalog)
    rng = np.random.default_rng(rng_seed)
    h, w = seg.shape
    region = placement_region(seg, catalog, strategy.background_class)

    # summed-area table for O(1) overlap counts
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(region, axis=0), axis=1)

    min_bottom = _horizon_row(strategy, h) if strategy.geometry == "perspective" else 0
    boxes: List[PixelBox] = []
    for index in range(strategy.object_count):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            bottom = int(rng.integers(min_bottom, h))
            box_h = box_height_at(bottom, strategy, h)
            box_w = int(max(1, min(w, round(box_h * strategy.aspect_ratio))))
            if bottom - box_h + 1 < 0:
                continue
            x0 = int(rng.integers(0, w - box_w + 1))
            y0, y1, x1 = bottom - box_h + 1, bottom + 1, x0 + box_w
            inside = (
                integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
            )
            if inside >= MIN_REGION_OVERLAP * box_h * box_w:
                boxes.append(PixelBox(x0, y0, x1, y1))
                break
        else:
            raise PlacementError(
                f"No admissible placement for box {index + 1} of {strategy.object_count} "
                f"({strategy.name}) after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
    logger.debug("Sampled %d boxes with strategy %s", len(boxes), strategy.name)
    return boxes


def boxes_mask(boxes: List[PixelBox], shape: Tuple[int, int]) -> np.ndarray:
    """Union of boxes as a boolean raster."""
    mask = np.zeros(shape, dtype=bool)
    for b in boxes:
        mask[b.y0 : b.y1, b.x0 : b.x1] = True
    return mask


def make_training_pair(
    image: np.ndarray,
    seg: SemanticGrid,
    catalog: ClassCatalog,
    strategy: BoxSamplingStrategy,
    rng_seed: int,
    fill: Optional[float] = None,
) -> TrainingPair:
    """
    Build a masked hallucination input from an image and its segmentation.

    Real foreground pixels and random boxes are both filled. Losses apply
    only to boxed pixels that are not real foreground.

    Args:
        image: Image of shape (h, w) or (h, w, channels)
        seg: Segmentation of the image
        catalog: Class catalog
        strategy: Random-box strategy
        rng_seed: Seed for box sampling
        fill: Fill value; defaults to the image mean

    Returns:
        TrainingPair
    """
    fg = foreground_mask(seg, catalog)
    boxes = sample_random_boxes(strategy, seg, rng_seed, catalog)
    boxed = boxes_mask(boxes, seg.shape)
    combined = ForegroundMask(fg.m | boxed)
    if fill is None:
        fill = float(np.mean(image))
    return TrainingPair(
        masked_image=apply_mask(image, combined, fill),
        input_mask=combined.m,
        loss_mask=boxed & ~fg.m,
        boxes=boxes,
        class_masks=class_mask_stack(seg, catalog),
    )
