"""
Wasserstein critic.

A small dense network f(x; theta) scoring flattened BEV maps, kept
K-Lipschitz by clamping every parameter to [-clip_c, clip_c] after each
update. Forward and backward passes are written out by hand.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.config import LossWeights
from src.utils.errors import ValidationError

LEAKY_SLOPE = 0.2


def leaky_relu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def leaky_relu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


@dataclass(frozen=True)
class CriticParams:
    """
    Dense layers: hidden layers use a leaky rectifier, the last layer is
    affine with a single output.

    Attributes:
        weights: Matrices of shape (fan_in, fan_out) per layer
        biases: Vectors of shape (fan_out,) per layer
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if not weights or len(weights) != len(biases):
            raise ValidationError("Critic needs one bias per weight matrix")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or w.shape[1] != b.shape[0]:
                raise ValidationError(f"Layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ValidationError(f"Layer {i} input does not match layer {i - 1} output")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError("Critic parameters must be finite")
        if weights[-1].shape[1] != 1:
            raise ValidationError("Critic output layer must have a single unit")
        for array in weights + biases:
            array.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_size] + [w.shape[1] for w in self.weights]

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.weights + self.biases)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def from_vector(self, vector: np.ndarray) -> "CriticParams":
        """Parameters with this layout and values taken from vector."""
        vector = np.asarray(vector, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vector[pos : pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(vector[pos : pos + b.size])
            pos += b.size
        if pos != vector.size:
            raise ValidationError(f"Vector has {vector.size} values, layout needs {pos}")
        return CriticParams(tuple(weights), tuple(biases))

    def clipped(self, clip_c: float) -> "CriticParams":
        return CriticParams(
            tuple(np.clip(w, -clip_c, clip_c) for w in self.weights),
            tuple(np.clip(b, -clip_c, clip_c) for b in self.biases),
        )

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ]
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CriticParams":
        try:
            weights = tuple(
                np.asarray(layer["weight"], dtype=np.float64).reshape(layer["shape"])
                for layer in payload["layers"]
            )
            biases = tuple(np.asarray(layer["bias"], dtype=np.float64) for layer in payload["layers"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"Malformed critic parameters: {exc}") from exc
        return cls(weights, biases)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CriticParams":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init_critic(
    input_size: int,
    hidden: Sequence[int],
    clip_c: float,
    rng: np.random.Generator,
) -> CriticParams:
    """Critic with every parameter drawn uniformly from [-clip_c, clip_c]."""
    sizes = [input_size] + list(hidden) + [1]
    weights = tuple(rng.uniform(-clip_c, clip_c, size=(a, b)) for a, b in zip(sizes, sizes[1:]))
    biases = tuple(rng.uniform(-clip_c, clip_c, size=b) for b in sizes[1:])
    return CriticParams(weights, biases)


def _as_batch(x: np.ndarray, params: CriticParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    batch = x.reshape(1, -1) if x.ndim == 1 else x
    if batch.ndim != 2 or batch.shape[1] != params.input_size:
        raise ValidationError(
            f"Critic expects inputs of length {params.input_size}, got shape {x.shape}"
        )
    return batch


def _forward(batch: np.ndarray, params: CriticParams):
    activations = [batch]
    pre = []
    h = batch
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else leaky_relu(z)
        activations.append(h)
    return h[:, 0], activations, pre


def critic_forward(x: np.ndarray, params: CriticParams) -> Union[float, np.ndarray]:
    """
    Critic scores.

    Args:
        x: One flattened map (n,) or a batch (m, n)

    Returns:
        A float for a single input, an array (m,) for a batch

    Raises:
        ValidationError: If the input length does not match the first layer
    """
    scores, _, _ = _forward(_as_batch(x, params), params)
    if np.asarray(x).ndim == 1:
        return float(scores[0])
    return scores


def critic_backward(
    x: np.ndarray, params: CriticParams, g_scores: np.ndarray
) -> Tuple[np.ndarray, CriticParams]:
    """
    Gradient of sum(g_scores * f(x)).

    Returns:
        (gradient wrt x shaped like x, gradient wrt the parameters laid out
        as CriticParams)
    """
    batch = _as_batch(x, params)
    _, activations, pre = _forward(batch, params)
    delta = np.asarray(g_scores, dtype=np.float64).reshape(-1, 1)
    last = len(params.weights) - 1
    g_weights: List[Optional[np.ndarray]] = [None] * len(params.weights)
    g_biases: List[Optional[np.ndarray]] = [None] * len(params.weights)
    for i in range(last, -1, -1):
        if i != last:
            delta = delta * leaky_relu_grad(pre[i])
        g_weights[i] = activations[i].T @ delta
        g_biases[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
    g_x = delta.reshape(np.asarray(x).shape)
    # gradient containers are not bound by the clip range
    return g_x, CriticParams(tuple(g_weights), tuple(g_biases))


def critic_gap(reals: np.ndarray, fakes: np.ndarray, params: CriticParams) -> float:
    """mean f(real) - mean f(fake)."""
    return float(np.mean(critic_forward(reals, params)) - np.mean(critic_forward(fakes, params)))


def wgan_critic_step(
    reals: np.ndarray,
    fakes: np.ndarray,
    params: CriticParams,
    weights: LossWeights,
) -> Tuple[CriticParams, float]:
    """
    One clipped ascent step on mean f(real) - mean f(fake).

    Args:
        reals: Batch (m, n) of simulator maps
        fakes: Batch (m', n) of refiner outputs
        params: Current critic
        weights: Supplies critic_lr and clip_c

    Returns:
        (updated critic with every parameter in [-clip_c, clip_c],
         critic loss = -(mean f(real) - mean f(fake)) before the step)

    Raises:
        ValidationError: If a batch is empty
    """
    reals = np.asarray(reals, dtype=np.float64)
    fakes = np.asarray(fakes, dtype=np.float64)
    if reals.shape[0] == 0 or fakes.shape[0] == 0:
        raise ValidationError("Critic step needs nonempty real and fake batches")

    gap = critic_gap(reals, fakes, params)
    _, g_real = critic_backward(reals, params, np.full(reals.shape[0], 1.0 / reals.shape[0]))
    _, g_fake = critic_backward(fakes, params, np.full(fakes.shape[0], 1.0 / fakes.shape[0]))
    ascent = g_real.to_vector() - g_fake.to_vector()
    updated = params.from_vector(params.to_vector() + weights.critic_lr * ascent)
    return updated.clipped(weights.clip_c), -gap
