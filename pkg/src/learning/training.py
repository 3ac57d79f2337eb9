"""
Adversarial refinement training.

Alternates clipped critic steps (simulator maps as reals, refiner outputs as
fakes) with refiner steps on L = L_sim + lambda * L_reconst. The refiner is
updated with Adam; the critic with plain clipped ascent.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.data_structures.grids import BevMap
from src.learning.critic import CriticParams, critic_backward, critic_forward, init_critic, wgan_critic_step
from src.learning.refiner import RefinerParams, check_toy_scale, init_refiner, refiner_apply, refiner_backward
from src.learning.losses import combined_refinement_loss
from src.utils.config import LossWeights
from src.utils.errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["step", "critic_loss", "gen_loss", "masked_mse"]
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
SWEEP_REL_TOL = 1e-2

SimSampler = Callable[[int], BevMap]


@dataclass(frozen=True)
class TrainingResult:
    """
    Attributes:
        refiner: Final refiner parameters
        critic: Final critic parameters
        trace: One row per step (step, critic_loss, gen_loss, masked_mse)
        initial_mse: Dataset masked MSE of the refiner before the first step
    """

    refiner: RefinerParams
    critic: CriticParams
    trace: pd.DataFrame
    initial_mse: float

    @property
    def final_masked_mse(self) -> float:
        if self.trace.empty:
            return self.initial_mse
        return float(self.trace["masked_mse"].iloc[-1])


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, lr: float, betas=ADAM_BETAS, eps: float = ADAM_EPS):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self._m: Optional[np.ndarray] = None
        self._v: Optional[np.ndarray] = None
        self._t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self._m is None:
            self._m = np.zeros_like(params)
            self._v = np.zeros_like(params)
        self._t += 1
        self._m = self.beta1 * self._m + (1 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1 - self.beta2) * grad**2
        m_hat = self._m / (1 - self.beta1**self._t)
        v_hat = self._v / (1 - self.beta2**self._t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def dataset_masked_mse(outputs: np.ndarray, targets: np.ndarray, masks: np.ndarray) -> float:
    """Mean over maps of sum(M * (Y - B)^2) / sum(M)."""
    per_map = np.sum(masks[..., None] * (outputs - targets) ** 2, axis=(1, 2, 3))
    return float(np.mean(per_map / masks.sum(axis=(1, 2))))


def _reconstruction_grad(
    outputs: np.ndarray,
    targets: np.ndarray,
    masks: np.ndarray,
    osm: Optional[np.ndarray],
    mode: str,
):
    """(value, gradient) of the batch reconstruction term selected by mode."""
    m = outputs.shape[0]
    value = 0.0
    grad = np.zeros_like(outputs)
    if mode in ("init", "both"):
        denom = masks.sum(axis=(1, 2))[:, None, None, None]
        diff = masks[..., None] * (outputs - targets)
        value += float(np.sum(diff**2 / denom)) / m
        grad += 2.0 * diff / denom / m
    if mode in ("osm", "both"):
        diff = outputs - osm
        value += float(np.sum(diff**2)) / m
        grad += 2.0 * diff / m
    return value, grad


def train_refiner(
    dataset: Sequence[BevMap],
    sim_sampler: SimSampler,
    weights: LossWeights,
    steps: int,
    critic_steps_per_gen: int = 5,
    rng_seed: int = 0,
    osm_targets: Optional[Sequence[BevMap]] = None,
    sim_pool_size: int = 256,
) -> TrainingResult:
    """
    Train the toy refiner against simulator samples.

    Args:
        dataset: Initial BEV maps (each with a nonempty observed mask)
        sim_sampler: Maps a seed to a fully observed simulator map
        weights: Loss weights, learning rates and network sizes
        steps: Refiner updates
        critic_steps_per_gen: Critic updates before each refiner update
        rng_seed: Seed for initialization, batches and simulator seeds
        osm_targets: Aligned OSM maps, one per dataset map; required when
                     weights.reconstruction_target is "osm" or "both"
        sim_pool_size: Simulator maps drawn once and reused as reals

    Returns:
        TrainingResult

    Raises:
        ValidationError: On an empty dataset, a grid above the toy scale,
                         inconsistent shapes or an empty observed mask
        NumericalError: If losses become non-finite
    """
    if not dataset:
        raise ValidationError("Training needs a nonempty dataset")
    shape = dataset[0].data.shape
    check_toy_scale(shape[:2])
    if any(b.data.shape != shape or b.class_ids != dataset[0].class_ids for b in dataset):
        raise ValidationError("All dataset maps must share shape and channels")
    if any(not b.observed.any() for b in dataset):
        raise ValidationError("Every dataset map needs at least one observed cell")
    mode = weights.reconstruction_target
    osm = None
    if mode in ("osm", "both"):
        if osm_targets is None or len(osm_targets) != len(dataset):
            raise ValidationError(f"reconstruction_target '{mode}' needs one OSM map per input")
        osm = np.stack([o.data for o in osm_targets])
        if osm.shape[1:] != shape:
            raise ValidationError("OSM targets must match the dataset shape")

    rng = np.random.default_rng(rng_seed)
    targets = np.stack([b.data for b in dataset])
    masks = np.stack([b.observed.astype(np.float64) for b in dataset])
    inputs = targets.reshape(len(dataset), -1)
    n = inputs.shape[1]

    pool = []
    for seed in rng.integers(0, 2**31 - 1, size=sim_pool_size):
        real = sim_sampler(int(seed))
        if real.data.shape != shape or real.class_ids != dataset[0].class_ids:
            raise ValidationError("Simulator maps must match the dataset shape and channels")
        pool.append(real.data.ravel())
    pool = np.stack(pool)

    refiner = init_refiner(shape, weights.refiner_hidden, rng)
    critic = init_critic(n, weights.critic_hidden, weights.clip_c, rng)
    adam = Adam(weights.gen_lr)
    start, _ = refiner_apply(inputs, refiner)
    initial_mse = dataset_masked_mse(start, targets, masks)
    m = weights.batch_size

    rows = []
    for step in range(steps):
        critic_loss = 0.0
        for _ in range(critic_steps_per_gen):
            reals = pool[rng.integers(0, len(pool), size=m)]
            batch = rng.integers(0, len(dataset), size=m)
            fakes, _ = refiner_apply(inputs[batch], refiner)
            critic, critic_loss = wgan_critic_step(reals, fakes.reshape(m, -1), critic, weights)

        reals = pool[rng.integers(0, len(pool), size=m)]
        batch = rng.integers(0, len(dataset), size=m)
        outputs, cache = refiner_apply(inputs[batch], refiner)
        fake_scores = critic_forward(outputs.reshape(m, -1), critic)
        l_sim = float(np.mean(critic_forward(reals, critic)) - np.mean(fake_scores))
        g_sim, _ = critic_backward(outputs.reshape(m, -1), critic, np.full(m, -1.0 / m))

        l_rec, g_rec = _reconstruction_grad(
            outputs, targets[batch], masks[batch], None if osm is None else osm[batch], mode
        )
        gen_loss = combined_refinement_loss(l_sim, l_rec, weights.lam)
        g_outputs = g_sim.reshape(outputs.shape) + weights.lam * g_rec
        grad = refiner_backward(cache, refiner, g_outputs).to_vector()
        if not (math.isfinite(gen_loss) and np.all(np.isfinite(grad))):
            raise NumericalError(f"Non-finite refiner loss or gradient at step {step}")
        refiner = refiner.from_vector(adam.step(refiner.to_vector(), grad))

        full, _ = refiner_apply(inputs, refiner)
        mse = dataset_masked_mse(full, targets, masks)
        rows.append((step, critic_loss, gen_loss, mse))
        if step % 50 == 0:
            logger.info(
                "step %d: critic %.4g, generator %.4g, masked mse %.4g",
                step,
                critic_loss,
                gen_loss,
                mse,
            )

    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    return TrainingResult(refiner=refiner, critic=critic, trace=trace, initial_mse=initial_mse)


def lambda_sweep(
    dataset: Sequence[BevMap],
    sim_sampler: SimSampler,
    weights: LossWeights,
    lambdas: Sequence[float],
    steps: int,
    rng_seed: int = 0,
    critic_steps_per_gen: int = 5,
) -> pd.DataFrame:
    """
    Train once per lambda with a shared seed.

    Returns:
        DataFrame with columns lambda, initial_mse, masked_mse (final)
    """
    results: List[dict] = []
    for lam in lambdas:
        run = train_refiner(
            dataset,
            sim_sampler,
            weights.model_copy(update={"lam": float(lam)}),
            steps,
            critic_steps_per_gen=critic_steps_per_gen,
            rng_seed=rng_seed,
        )
        results.append(
            {"lambda": lam, "initial_mse": run.initial_mse, "masked_mse": run.final_masked_mse}
        )
        logger.info("lambda %g: final masked mse %.6g", lam, run.final_masked_mse)
    sweep = pd.DataFrame(results)
    violations = sweep_violations(sweep)
    if violations > 1:
        logger.warning("Masked MSE rose with lambda at %d adjacent pairs", violations)
    return sweep


def sweep_violations(sweep: pd.DataFrame, rel_tol: float = SWEEP_REL_TOL) -> int:
    """
    Adjacent lambda pairs where the final masked MSE rises.

    A pair counts when the larger lambda's error exceeds the smaller one's by
    more than ``rel_tol`` relative. Rows are taken in increasing lambda order.
    """
    if sweep.empty:
        return 0
    mse = sweep.sort_values("lambda", kind="stable")["masked_mse"].to_numpy(dtype=np.float64)
    return int(np.sum(mse[1:] > mse[:-1] * (1.0 + rel_tol)))
