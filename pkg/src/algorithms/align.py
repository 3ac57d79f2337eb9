"""
Alignment of rasterized OSM maps with initial BEV estimates.

Finds warp parameters theta minimizing

    sum(M * (B_init - W(B_osm; theta))^2) / sum(M)
        + lambda2 * lowpass(flow) + lambda3 * ||theta||^2

where M is the observed mask of B_init. The default optimizer is gradient
descent with Armijo backtracking on a diagonally preconditioned problem;
scipy's L-BFGS-B is available as an alternative. Box parameters are fitted
alone first, then jointly with the flow, and the best of several jittered
restarts is kept.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from src.algorithms.warp import (
    N_BOX,
    BoxParams,
    FlowField,
    WarpParams,
    l2_regularizer,
    lowpass_regularizer,
    warp_data,
    warp_data_vjp,
)
from src.data_structures.grids import BevMap
from src.utils.config import AlignConfig
from src.utils.errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_BACKTRACKS = 40
TRACE_COLUMNS = ["restart", "phase", "iteration", "objective", "step"]


@dataclass(frozen=True)
class AlignResult:
    """
    Outcome of align_osm.

    Attributes:
        params: Best warp parameters found
        objective: Objective value at params
        restart: Index of the winning restart (0 = identity start)
        trace: Accepted objective values of every restart
               (columns restart, phase, iteration, objective, step)
    """

    params: WarpParams
    objective: float
    restart: int
    trace: pd.DataFrame

    def best_trace(self) -> pd.DataFrame:
        return self.trace[self.trace["restart"] == self.restart].reset_index(drop=True)


def _check_pair(b_init: BevMap, b_osm: BevMap) -> np.ndarray:
    if b_init.shape != b_osm.shape or b_init.class_ids != b_osm.class_ids:
        raise ValidationError(
            f"Maps differ: {b_init.shape}/{b_init.class_ids} vs {b_osm.shape}/{b_osm.class_ids}"
        )
    mask = b_init.observed
    if not mask.any():
        raise ValidationError("B_init has an empty observed mask")
    return mask


def _objective_vector(
    b_init: BevMap, b_osm: BevMap, cfg: AlignConfig, flow_shape: Tuple[int, int]
) -> Callable[[np.ndarray], Tuple[float, np.ndarray]]:
    """Objective and gradient as a function of the flat parameter vector."""
    mask = _check_pair(b_init, b_osm)
    weight = mask[..., None].astype(np.float64)
    denom = float(mask.sum())
    target = b_init.data
    source = b_osm.data
    fr, fc = flow_shape

    def evaluate(vector: np.ndarray) -> Tuple[float, np.ndarray]:
        params = WarpParams.from_vector(vector, fr, fc)
        warped, cache = warp_data(source, params)
        residual = (target - warped) * weight
        value = float(np.sum(residual**2)) / denom
        grad, _ = warp_data_vjp(cache, -2.0 * residual / denom)

        smooth, g_smooth = lowpass_regularizer(params.flow)
        norm, g_norm = l2_regularizer(params)
        value += cfg.lambda2 * smooth + cfg.lambda3 * norm
        grad[N_BOX:] += cfg.lambda2 * g_smooth.ravel()
        grad += cfg.lambda3 * g_norm
        return value, grad

    return evaluate


def alignment_objective(
    b_init: BevMap, b_osm: BevMap, params: WarpParams, cfg: AlignConfig
) -> Tuple[float, np.ndarray]:
    """
    Alignment objective and its gradient.

    Args:
        b_init: Initial BEV estimate; its observed mask weights the error
        b_osm: Rasterized OSM map, warped raw (no renormalization)
        params: Warp parameters
        cfg: Regularization weights

    Returns:
        (value, gradient in WarpParams.to_vector order)

    Raises:
        ValidationError: If the maps differ in layout or the mask is empty
    """
    evaluate = _objective_vector(b_init, b_osm, cfg, (params.flow.rows, params.flow.cols))
    return evaluate(params.to_vector())


def _preconditioner(shape: Tuple[int, int], n_flow: int, flow_nodes: int) -> np.ndarray:
    """Diagonal scaling so a unit step moves border cells about one cell."""
    radius_sq = max(1.0, ((shape[0] - 1) ** 2 + (shape[1] - 1) ** 2) / 4.0)
    box = np.array([1.0, 1.0, 1.0 / radius_sq, 1.0 / radius_sq])
    return np.concatenate([box, np.full(n_flow, float(flow_nodes))])


def _free_masks(cfg: AlignConfig, size: int) -> List[Tuple[str, np.ndarray, int]]:
    """(phase name, free-parameter mask, iteration budget) per phase."""
    box = np.zeros(size, dtype=bool)
    box[:N_BOX] = True
    if cfg.warp_mode == "box":
        return [("box", box, cfg.max_iters)]
    if cfg.warp_mode == "flow":
        return [("flow", ~box, cfg.max_iters)]
    box_iters = int(round(cfg.box_fraction * cfg.max_iters))
    phases = []
    if box_iters > 0:
        phases.append(("box", box, box_iters))
    if cfg.max_iters - box_iters > 0:
        phases.append(("box+flow", np.ones(size, dtype=bool), cfg.max_iters - box_iters))
    return phases


def _check_finite(value: float, grad: np.ndarray) -> None:
    if not math.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericalError("Alignment objective or gradient is not finite")


def _descend(
    evaluate, x0: np.ndarray, precond: np.ndarray, free: np.ndarray, iters: int, cfg: AlignConfig
) -> Tuple[np.ndarray, float, List[Tuple[int, float, float]]]:
    """Preconditioned gradient descent with Armijo backtracking."""
    x = x0.copy()
    value, grad = evaluate(x)
    _check_finite(value, grad)
    records = []
    step = cfg.step_size
    scale = np.where(free, precond, 0.0)

    for iteration in range(iters):
        direction = scale * grad
        slope = float(grad @ direction)
        if slope <= 0:
            break
        step = min(cfg.step_size, 2.0 * step)
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            candidate = x - step * direction
            new_value, new_grad = evaluate(candidate)
            if math.isfinite(new_value) and new_value <= value - ARMIJO_C * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        _check_finite(new_value, new_grad)
        decrease = value - new_value
        x, value, grad = candidate, new_value, new_grad
        records.append((iteration, value, step))
        if decrease <= cfg.convergence_tol * max(abs(value), 1e-12):
            break
    return x, value, records


def _lbfgs(
    evaluate, x0: np.ndarray, precond: np.ndarray, free: np.ndarray, iters: int, cfg: AlignConfig
) -> Tuple[np.ndarray, float, List[Tuple[int, float, float]]]:
    """scipy L-BFGS-B over the free parameters in preconditioned coordinates."""
    root = np.sqrt(precond[free])

    def expand(y: np.ndarray) -> np.ndarray:
        x = x0.copy()
        x[free] += root * y
        return x

    def fun(y: np.ndarray):
        value, grad = evaluate(expand(y))
        _check_finite(value, grad)
        return value, grad[free] * root

    records: List[Tuple[int, float, float]] = []

    def callback(y: np.ndarray) -> None:
        records.append((len(records), evaluate(expand(y))[0], float("nan")))

    result = minimize(
        fun,
        np.zeros(int(free.sum())),
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": iters, "ftol": cfg.convergence_tol},
    )
    x = expand(result.x)
    value = evaluate(x)[0]
    start = evaluate(x0)[0]
    if value > start:
        return x0, start, []
    # keep only accepted, nonincreasing values
    kept, best = [], start
    for record in records:
        if record[1] <= best:
            kept.append(record)
            best = record[1]
    return x, value, kept


def _initial_vector(
    cfg: AlignConfig, restart: int, rng: np.random.Generator, size: int
) -> np.ndarray:
    x = np.zeros(size)
    if restart == 0 or cfg.warp_mode == "flow":
        return x
    x[0] = rng.uniform(-cfg.jitter_translation, cfg.jitter_translation)
    x[1] = rng.uniform(-cfg.jitter_translation, cfg.jitter_translation)
    x[2] = math.radians(rng.uniform(-cfg.jitter_rotation_deg, cfg.jitter_rotation_deg))
    x[3] = rng.uniform(-cfg.jitter_log_scale, cfg.jitter_log_scale)
    return x


def align_osm(b_init: BevMap, b_osm: BevMap, cfg: AlignConfig = AlignConfig()) -> AlignResult:
    """
    Estimate the warp aligning B_osm with B_init.

    Restart 0 starts at the identity, the others at seeded jitters of the box
    parameters. The lowest final objective wins; ties go to the lowest
    restart index.

    Args:
        b_init: Initial BEV estimate (partially observed)
        b_osm: Rasterized OSM map
        cfg: Optimizer settings

    Returns:
        AlignResult

    Raises:
        ValidationError: If the maps differ in layout or B_init's mask is empty
        NumericalError: If the objective becomes non-finite
    """
    flow_shape = (cfg.flow_rows, cfg.flow_cols)
    evaluate = _objective_vector(b_init, b_osm, cfg, flow_shape)
    size = WarpParams.identity(*flow_shape).size
    precond = _preconditioner(b_init.shape, size - N_BOX, cfg.flow_rows * cfg.flow_cols)
    phases = _free_masks(cfg, size)
    optimizer = _descend if cfg.method == "gd" else _lbfgs
    rng = np.random.default_rng(cfg.seed)

    rows = []
    best: Tuple[float, int, np.ndarray] = (math.inf, -1, np.zeros(size))
    for restart in range(cfg.restarts + 1):
        x = _initial_vector(cfg, restart, rng, size)
        value, _ = evaluate(x)
        rows.append((restart, "start", -1, value, 0.0))
        for phase, free, iters in phases:
            x, value, records = optimizer(evaluate, x, precond, free, iters, cfg)
            rows.extend((restart, phase, it, obj, step) for it, obj, step in records)
        logger.info("Alignment restart %d finished at objective %.6g", restart, value)
        if value < best[0]:
            best = (value, restart, x)

    value, restart, x = best
    params = WarpParams.from_vector(x, *flow_shape)
    logger.info(
        "Best alignment: restart %d, objective %.6g, box %s",
        restart,
        value,
        params.box.as_tuple(),
    )
    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    return AlignResult(params=params, objective=value, restart=restart, trace=trace)


def identity_params(cfg: AlignConfig) -> WarpParams:
    """Identity warp with the configured flow resolution."""
    return WarpParams(BoxParams(), FlowField.zeros(cfg.flow_rows, cfg.flow_cols))
