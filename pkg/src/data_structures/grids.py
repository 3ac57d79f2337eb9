"""
Raster types shared by every stage: per-cell class distributions, depth maps,
label maps and BEV maps with their observed mask.

All rasters are immutable after construction; their arrays are copied and
marked read-only.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.data_structures.catalog import ClassCatalog, default_catalog
from src.utils.errors import ValidationError

NORMALIZATION_TOL = 1e-6


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SemanticGrid:
    """
    2D raster of per-cell class distributions.

    Attributes:
        data: Array of shape (height, width, channels), entries >= 0
        class_ids: Catalog id of every channel, strictly increasing

    A cell with an all-zero vector is unobserved.

    Raises:
        ValidationError: If the array is not 3D, contains negative or
                         non-finite entries, or class_ids do not match
    """

    data: np.ndarray
    class_ids: Tuple[int, ...]

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim != 3:
            raise ValidationError(f"SemanticGrid needs a 3D array, got shape {data.shape}")
        ids = tuple(int(i) for i in self.class_ids)
        if len(ids) != data.shape[2]:
            raise ValidationError(
                f"{len(ids)} class ids given for {data.shape[2]} channels"
            )
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValidationError(f"class_ids must be strictly increasing, got {ids}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("SemanticGrid entries must be finite")
        if np.any(data < 0):
            raise ValidationError("SemanticGrid entries must be nonnegative")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "class_ids", ids)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def mass(self) -> np.ndarray:
        """Per-cell sum over channels."""
        return self.data.sum(axis=2)

    def observed_mask(self) -> np.ndarray:
        """Cells with positive mass."""
        return self.mass() > 0

    def is_normalized(self, tol: float = NORMALIZATION_TOL) -> bool:
        """True when every observed cell sums to 1 within tol."""
        mass = self.mass()
        observed = mass > 0
        return bool(np.all(np.abs(mass[observed] - 1.0) <= tol))

    def channel_index(self, class_id: int) -> int:
        """
        Channel holding a class id.

        Raises:
            KeyError: If the class has no channel in this grid
        """
        try:
            return self.class_ids.index(class_id)
        except ValueError:
            raise KeyError(f"Class id {class_id} has no channel in this grid") from None

    @classmethod
    def from_labels(
        cls, labels: np.ndarray, class_ids: Sequence[int]
    ) -> "SemanticGrid":
        """
        One-hot grid from a label array.

        Labels that are not in class_ids (e.g. unknown) become unobserved.
        """
        labels = np.asarray(labels)
        ids = np.asarray(class_ids)
        data = (labels[..., None] == ids[None, None, :]).astype(np.float64)
        return cls(data, tuple(class_ids))


@dataclass(frozen=True)
class DepthMap:
    """
    Metric depth per cell plus a validity mask.

    Invalid cells hold NaN in the depth array.

    Raises:
        ValidationError: If a valid cell has non-positive or non-finite depth
    """

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.array(self.depth, dtype=np.float64, copy=True)
        valid = np.array(self.valid, dtype=bool, copy=True)
        if depth.ndim != 2 or depth.shape != valid.shape:
            raise ValidationError(
                f"Depth {depth.shape} and validity {valid.shape} must be equal 2D shapes"
            )
        values = depth[valid]
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValidationError("Depth must be finite and > 0 wherever valid")
        depth[~valid] = np.nan
        object.__setattr__(self, "depth", _frozen(depth, np.float64))
        object.__setattr__(self, "valid", _frozen(valid, bool))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape

    @classmethod
    def from_array(cls, depth: np.ndarray) -> "DepthMap":
        """Build from an array where NaN marks invalid cells."""
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, ~np.isnan(depth))


@dataclass(frozen=True)
class LabelGrid:
    """Class id per cell (argmax view of a SemanticGrid)."""

    labels: np.ndarray

    def __post_init__(self):
        labels = _frozen(self.labels, np.int64)
        if labels.ndim != 2:
            raise ValidationError(f"LabelGrid needs a 2D array, got shape {labels.shape}")
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    def validate(self, catalog: ClassCatalog) -> None:
        """
        Check every label against a catalog.

        Raises:
            ValidationError: If a label is not a catalog id
        """
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= catalog.num_classes
        ):
            raise ValidationError("LabelGrid contains ids outside the catalog")


@dataclass(frozen=True)
class BevMap:
    """
    Bird's-eye-view map: a semantic grid plus its observed mask M.

    observed[i, j] is False exactly where the grid cell has zero mass.

    Raises:
        ValidationError: If the mask disagrees with the grid's mass
    """

    grid: SemanticGrid
    observed: np.ndarray

    def __post_init__(self):
        observed = _frozen(self.observed, bool)
        if observed.shape != self.grid.shape:
            raise ValidationError(
                f"Observed mask {observed.shape} does not match grid {self.grid.shape}"
            )
        if not np.array_equal(observed, self.grid.observed_mask()):
            raise ValidationError("Observed mask must be set exactly where the grid has mass")
        object.__setattr__(self, "observed", observed)

    @classmethod
    def from_grid(cls, grid: SemanticGrid) -> "BevMap":
        """Derive the observed mask from the grid's mass."""
        return cls(grid, grid.observed_mask())

    @classmethod
    def from_labels(cls, labels: np.ndarray, class_ids: Sequence[int]) -> "BevMap":
        return cls.from_grid(SemanticGrid.from_labels(labels, class_ids))

    @property
    def data(self) -> np.ndarray:
        return self.grid.data

    @property
    def class_ids(self) -> Tuple[int, ...]:
        return self.grid.class_ids

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape

    def observed_fraction(self) -> float:
        return float(self.observed.mean())

    def is_fully_observed(self) -> bool:
        return bool(self.observed.all())


def argmax_labels(grid: SemanticGrid, catalog: Optional[ClassCatalog] = None) -> LabelGrid:
    """
    Per-cell argmax as catalog ids.

    Args:
        grid: Semantic grid
        catalog: Catalog supplying the unknown id (default catalog if None)

    Returns:
        LabelGrid where unobserved cells hold the unknown id and ties go to
        the lowest class id
    """
    catalog = catalog or default_catalog()
    ids = np.asarray(grid.class_ids, dtype=np.int64)
    # np.argmax returns the first maximum; class_ids are increasing
    labels = ids[np.argmax(grid.data, axis=2)]
    labels = np.where(grid.observed_mask(), labels, catalog.unknown_id)
    return LabelGrid(labels)


def normalize_cells(grid: SemanticGrid) -> SemanticGrid:
    """
    Scale every cell with positive mass to sum to 1.

    Zero-mass cells stay zero, i.e. unobserved.
    """
    mass = grid.mass()
    safe = np.where(mass > 0, mass, 1.0)
    return SemanticGrid(grid.data / safe[..., None], grid.class_ids)
