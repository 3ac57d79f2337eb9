"""
Toy learned refiner.

A dense encoder-decoder with one leaky-rectifier bottleneck over flattened
toy-scale BEV maps; a per-cell softmax turns the decoder output into class
distributions. Gradients are computed by hand.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Tuple, Union

import numpy as np

from src.data_structures.grids import BevMap, SemanticGrid
from src.learning.critic import leaky_relu, leaky_relu_grad
from src.utils.errors import ValidationError

MAX_TOY_ROWS = 16
MAX_TOY_COLS = 8


@dataclass(frozen=True)
class RefinerParams:
    """
    Attributes:
        w1, b1: Encoder (n, hidden), (hidden,)
        w2, b2: Decoder (hidden, n), (n,)
        map_shape: (k, l, C) of the maps the refiner reads and writes
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    map_shape: Tuple[int, int, int]

    def __post_init__(self):
        k, l, c = (int(v) for v in self.map_shape)
        n = k * l * c
        arrays = [np.array(a, dtype=np.float64) for a in (self.w1, self.b1, self.w2, self.b2)]
        w1, b1, w2, b2 = arrays
        hidden = w1.shape[1] if w1.ndim == 2 else -1
        if (
            w1.shape != (n, hidden)
            or b1.shape != (hidden,)
            or w2.shape != (hidden, n)
            or b2.shape != (n,)
        ):
            raise ValidationError(f"Refiner parameter shapes do not fit map shape {(k, l, c)}")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValidationError("Refiner parameters must be finite")
        for name, array in zip(("w1", "b1", "w2", "b2"), arrays):
            array.flags.writeable = False
            object.__setattr__(self, name, array)
        object.__setattr__(self, "map_shape", (k, l, c))

    @property
    def input_size(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def from_vector(self, vector: np.ndarray) -> "RefinerParams":
        vector = np.asarray(vector, dtype=np.float64)
        sizes = [self.w1.size, self.b1.size, self.w2.size, self.b2.size]
        if vector.size != sum(sizes):
            raise ValidationError(f"Vector has {vector.size} values, layout needs {sum(sizes)}")
        parts = np.split(vector, np.cumsum(sizes)[:-1])
        return RefinerParams(
            parts[0].reshape(self.w1.shape),
            parts[1],
            parts[2].reshape(self.w2.shape),
            parts[3],
            self.map_shape,
        )

    def save(self, path: Union[str, Path]) -> None:
        """Write the parameters to an .npz archive."""
        np.savez(
            Path(path),
            w1=self.w1,
            b1=self.b1,
            w2=self.w2,
            b2=self.b2,
            map_shape=np.asarray(self.map_shape),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RefinerParams":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"File not found: {path}")
        with np.load(path) as archive:
            try:
                return cls(
                    archive["w1"],
                    archive["b1"],
                    archive["w2"],
                    archive["b2"],
                    tuple(int(v) for v in archive["map_shape"]),
                )
            except KeyError as exc:
                raise ValidationError(f"{path}: missing refiner array {exc}") from exc


def check_toy_scale(shape: Tuple[int, int]) -> None:
    """
    Raises:
        ValidationError: If the grid exceeds MAX_TOY_ROWS x MAX_TOY_COLS
    """
    if shape[0] > MAX_TOY_ROWS or shape[1] > MAX_TOY_COLS:
        raise ValidationError(
            f"Refiner is limited to {MAX_TOY_ROWS}x{MAX_TOY_COLS} grids, got {shape[0]}x{shape[1]}"
        )


def init_refiner(
    map_shape: Tuple[int, int, int], hidden: int, rng: np.random.Generator, scale: float = 0.1
) -> RefinerParams:
    """Gaussian weights with standard deviation scale, zero biases."""
    check_toy_scale(map_shape[:2])
    n = int(np.prod(map_shape))
    return RefinerParams(
        rng.normal(0.0, scale, size=(n, hidden)),
        np.zeros(hidden),
        rng.normal(0.0, scale, size=(hidden, n)),
        np.zeros(n),
        map_shape,
    )


class RefinerCache(NamedTuple):
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    probs: np.ndarray


def _softmax_cells(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def refiner_apply(x: np.ndarray, params: RefinerParams) -> Tuple[np.ndarray, RefinerCache]:
    """
    Batch forward pass.

    Args:
        x: Flattened maps of shape (m, n)

    Returns:
        (per-cell distributions of shape (m, k, l, C), cache)
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_size:
        raise ValidationError(f"Refiner expects inputs of length {params.input_size}, got {x.shape}")
    pre = x @ params.w1 + params.b1
    hidden = leaky_relu(pre)
    logits = (hidden @ params.w2 + params.b2).reshape((x.shape[0],) + params.map_shape)
    probs = _softmax_cells(logits)
    return probs, RefinerCache(x, pre, hidden, probs)


def refiner_backward(cache: RefinerCache, params: RefinerParams, g_probs: np.ndarray) -> RefinerParams:
    """
    Gradient of sum(g_probs * refiner output) wrt the parameters.

    Returns:
        Gradient laid out as RefinerParams
    """
    p = cache.probs
    g_logits = p * (g_probs - np.sum(g_probs * p, axis=-1, keepdims=True))
    g_out = g_logits.reshape(p.shape[0], -1)
    g_w2 = cache.hidden.T @ g_out
    g_b2 = g_out.sum(axis=0)
    g_pre = (g_out @ params.w2.T) * leaky_relu_grad(cache.pre)
    g_w1 = cache.x.T @ g_pre
    g_b1 = g_pre.sum(axis=0)
    return RefinerParams(g_w1, g_b1, g_w2, g_b2, params.map_shape)


def refiner_forward(b_init: BevMap, params: RefinerParams) -> BevMap:
    """
    Refine one map.

    Returns:
        Fully observed BevMap with normalized cells over b_init's channels

    Raises:
        ValidationError: If the map shape does not match the refiner
    """
    if b_init.data.shape != params.map_shape:
        raise ValidationError(
            f"Map shape {b_init.data.shape} does not match refiner {params.map_shape}"
        )
    probs, _ = refiner_apply(b_init.data.reshape(1, -1), params)
    return BevMap.from_grid(SemanticGrid(probs[0], b_init.class_ids))
