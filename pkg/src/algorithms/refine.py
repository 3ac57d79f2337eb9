"""
Heuristic BEV completion.
Fills unobserved cells from the closest observed cell towards the camera.
"""

import logging
from typing import Optional

import numpy as np

from src.data_structures.catalog import ClassCatalog, default_catalog
from src.data_structures.grids import BevMap, SemanticGrid

logger = logging.getLogger(__name__)


def heuristic_refine(bev: BevMap, catalog: Optional[ClassCatalog] = None) -> BevMap:
    """
    Fill every unobserved cell with the distribution of the nearest observed
    cell below it in the same column (larger row index, i.e. closer to the
    camera).

    Cells with no observed cell towards the camera become one-hot unknown;
    an unknown channel is added only when such cells exist. Observed cells
    are never modified, so the operation is idempotent.

    Args:
        bev: Partially observed BEV map
        catalog: Catalog supplying the unknown id

    Returns:
        Fully observed BevMap
    """
    if bev.is_fully_observed():
        return bev
    catalog = catalog or default_catalog()
    k, l = bev.shape

    # nearest observed row at or below each cell, scanning from the camera row up
    rows = np.arange(k)[:, None]
    reversed_hits = np.where(bev.observed[::-1], rows, -1)
    nearest = np.maximum.accumulate(reversed_hits, axis=0)[::-1]
    has_source = nearest >= 0
    source_rows = np.where(has_source, k - 1 - nearest, 0)

    filled = bev.data[source_rows, np.arange(l)[None, :]]
    filled[~has_source] = 0.0

    class_ids = bev.class_ids
    unknown = catalog.unknown_id
    if not has_source.all():
        if unknown not in class_ids:
            class_ids = tuple(sorted(class_ids + (unknown,)))
            position = class_ids.index(unknown)
            filled = np.insert(filled, position, 0.0, axis=2)
        filled[~has_source, class_ids.index(unknown)] = 1.0

    logger.info(
        "Heuristic fill: %d cells filled, %d set to unknown",
        int((~bev.observed & has_source).sum()),
        int((~has_source).sum()),
    )
    return BevMap.from_grid(SemanticGrid(filled, class_ids))
