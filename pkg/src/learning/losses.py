"""
Refinement losses.

Masked reconstruction of the initial estimate (zero weight on unobserved
cells), reconstruction of the aligned OSM map, the Wasserstein adversarial
term against simulator samples, and their weighted combination.
"""

from typing import Tuple, Union

import numpy as np

from src.data_structures.grids import BevMap
from src.utils.errors import ValidationError

MapLike = Union[BevMap, np.ndarray]


def _as_array(x: MapLike) -> np.ndarray:
    if isinstance(x, BevMap):
        return x.data
    return np.asarray(x, dtype=np.float64)


def masked_reconstruction_loss(
    a: MapLike, b: MapLike, mask: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    ||(A - B) * M||^2 / sum(M).

    Args:
        a, b: Maps (or arrays) of equal shape (k, l, C)
        mask: Boolean or 0/1 array of shape (k, l)

    Returns:
        (value, gradient wrt a, gradient wrt b)

    Raises:
        ValidationError: If shapes differ or the mask is empty
    """
    a, b = _as_array(a), _as_array(b)
    mask = np.asarray(mask, dtype=np.float64)
    if a.shape != b.shape or a.shape[:2] != mask.shape:
        raise ValidationError(f"Shapes differ: {a.shape}, {b.shape}, mask {mask.shape}")
    denom = float(mask.sum())
    if denom <= 0:
        raise ValidationError("Reconstruction mask is empty")
    diff = (a - b) * mask[..., None]
    grad_a = 2.0 * diff / denom
    return float(np.sum(diff**2)) / denom, grad_a, -grad_a


def osm_reconstruction_loss(final: MapLike, osm: MapLike) -> Tuple[float, np.ndarray]:
    """
    ||B_final - B_osm||^2 summed over all cells.

    Returns:
        (value, gradient wrt final)

    Raises:
        ValidationError: If shapes differ
    """
    final, osm = _as_array(final), _as_array(osm)
    if final.shape != osm.shape:
        raise ValidationError(f"Shapes differ: {final.shape} vs {osm.shape}")
    diff = final - osm
    return float(np.sum(diff**2)), 2.0 * diff


def adversarial_loss(
    real_scores: np.ndarray, fake_scores: np.ndarray
) -> Tuple[float, np.ndarray]:
    """
    L_sim = mean f(B_sim) - mean f(B_final).

    The critic scores simulator maps high, so the refiner lowers L_sim by
    raising the scores of its own outputs.

    Returns:
        (value, gradient wrt fake_scores)
    """
    real_scores = np.asarray(real_scores, dtype=np.float64)
    fake_scores = np.asarray(fake_scores, dtype=np.float64)
    if real_scores.size == 0 or fake_scores.size == 0:
        raise ValidationError("Adversarial loss needs nonempty score batches")
    value = float(real_scores.mean() - fake_scores.mean())
    return value, np.full(fake_scores.shape, -1.0 / fake_scores.size)


def combined_refinement_loss(l_sim: float, l_reconst: float, lam: float) -> float:
    """L = L_sim + lambda * L_reconst."""
    return l_sim + lam * l_reconst
