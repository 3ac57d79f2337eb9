"""
Differentiable warping of BEV maps.

A warp is a similarity transform ("box": translation, rotation, log-scale
about the grid center) composed with a coarse displacement field ("flow")
that is bilinearly upsampled to full resolution. Output cells sample their
source through the inverse mapping with bilinear interpolation; neighbours
outside the grid contribute zero.

Coordinates are (row, col). Box translation (tx, ty) and flow (du, dv) are
content displacements in cells: tx and dv move content along columns, ty
and du along rows.

Every operation has an analytic gradient.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Tuple, Union

import numpy as np

from src.data_structures.geometry import BevConfig
from src.data_structures.grids import BevMap, SemanticGrid
from src.utils.errors import ValidationError

BOX_PARAM_NAMES = ("tx", "ty", "rot", "log_scale")
N_BOX = len(BOX_PARAM_NAMES)
MASK_THRESHOLD = 0.5
# bilinear neighbours plus the backward ones used on lattice points
NEIGHBOURS = ((0, 0), (0, 1), (1, 0), (1, 1), (-1, 0), (-1, 1), (0, -1), (1, -1))

Shape = Union[BevConfig, Tuple[int, int]]


def _shape_of(shape: Shape) -> Tuple[int, int]:
    if isinstance(shape, BevConfig):
        return shape.shape
    return (int(shape[0]), int(shape[1]))


@dataclass(frozen=True)
class BoxParams:
    """
    Similarity transform about the grid center.

    Attributes:
        tx, ty: Translation in cells (columns, rows)
        rotation: Radians
        log_scale: Natural log of the scale factor
    """

    tx: float = 0.0
    ty: float = 0.0
    rotation: float = 0.0
    log_scale: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise ValidationError(f"Box parameters must be finite, got {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.tx, self.ty, self.rotation, self.log_scale)

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    def inverse(self) -> "BoxParams":
        """The transform undoing this one."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        inv_s = math.exp(-self.log_scale)
        # t' = -(1/s) R(-rot) t
        tx = -inv_s * (c * self.tx + s * self.ty)
        ty = -inv_s * (-s * self.tx + c * self.ty)
        return BoxParams(tx, ty, -self.rotation, -self.log_scale)


@dataclass(frozen=True)
class FlowField:
    """
    Coarse displacement field.

    Attributes:
        data: Array of shape (rows, cols, 2); [..., 0] = du (rows),
              [..., 1] = dv (cols)
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3 or data.shape[2] != 2:
            raise ValidationError(f"Flow needs shape (rows, cols, 2), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("Flow entries must be finite")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "FlowField":
        return cls(np.zeros((rows, cols, 2)))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def upsample(self, shape: Shape) -> Tuple[np.ndarray, np.ndarray]:
        """Full-resolution (du, dv), each of the grid's shape."""
        k, l = _shape_of(shape)
        u_r = interpolation_matrix(k, self.rows)
        u_c = interpolation_matrix(l, self.cols)
        return u_r @ self.data[..., 0] @ u_c.T, u_r @ self.data[..., 1] @ u_c.T


@dataclass(frozen=True)
class WarpParams:
    """Warp parameters theta: a box transform followed by a flow field."""

    box: BoxParams
    flow: FlowField

    @classmethod
    def identity(cls, flow_rows: int = 8, flow_cols: int = 4) -> "WarpParams":
        return cls(BoxParams(), FlowField.zeros(flow_rows, flow_cols))

    @property
    def size(self) -> int:
        return N_BOX + self.flow.data.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.array(self.box.as_tuple()), self.flow.data.ravel()])

    @classmethod
    def from_vector(cls, vector: np.ndarray, flow_rows: int, flow_cols: int) -> "WarpParams":
        vector = np.asarray(vector, dtype=np.float64)
        expected = N_BOX + flow_rows * flow_cols * 2
        if vector.shape != (expected,):
            raise ValidationError(f"Parameter vector needs length {expected}, got {vector.shape}")
        box = BoxParams(*(float(v) for v in vector[:N_BOX]))
        flow = FlowField(vector[N_BOX:].reshape(flow_rows, flow_cols, 2))
        return cls(box, flow)

    def to_dict(self) -> dict:
        return {
            "box": dict(zip(BOX_PARAM_NAMES, self.box.as_tuple())),
            "flow": {
                "rows": self.flow.rows,
                "cols": self.flow.cols,
                "data": self.flow.data.ravel().tolist(),
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "WarpParams":
        """
        Raises:
            ValidationError: If keys are missing or the flow size is wrong
        """
        try:
            box = BoxParams(*(float(payload["box"][name]) for name in BOX_PARAM_NAMES))
            rows, cols = int(payload["flow"]["rows"]), int(payload["flow"]["cols"])
            data = np.asarray(payload["flow"]["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"Malformed warp parameters: {exc}") from exc
        if data.size != rows * cols * 2:
            raise ValidationError(f"Flow data has {data.size} values for {rows}x{cols}x2")
        return cls(box, FlowField(data.reshape(rows, cols, 2)))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "WarpParams":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def interpolation_matrix(n_out: int, n_in: int) -> np.ndarray:
    """
    Linear interpolation from n_in samples to n_out with aligned end points.

    Returns:
        Matrix U of shape (n_out, n_in) with rows summing to 1
    """
    u = np.zeros((n_out, n_in))
    if n_in == 1:
        u[:, 0] = 1.0
        return u
    pos = np.arange(n_out) * ((n_in - 1) / max(n_out - 1, 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    frac = pos - lo
    u[np.arange(n_out), lo] = 1.0 - frac
    u[np.arange(n_out), lo + 1] += frac
    return u


class _SampleCache(NamedTuple):
    shape: Tuple[int, int, int]
    flat: np.ndarray
    weights: np.ndarray
    dweights_dy: np.ndarray
    dweights_dx: np.ndarray
    values: np.ndarray


def _sample(data: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> Tuple[np.ndarray, _SampleCache]:
    """
    Bilinear sampling of data (k, l, C) at real coordinates; returns (out, cache).

    At exactly integral coordinates the one-sided derivatives disagree; the
    cache then carries their average, the central difference, so an
    optimizer started on the lattice still sees both neighbours.
    """
    k, l, c = data.shape
    out_shape = rows.shape
    y = np.asarray(rows, dtype=np.float64).ravel()
    x = np.asarray(cols, dtype=np.float64).ravel()
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    wy, wx = y - y0, x - x0
    on_row, on_col = wy == 0.0, wx == 0.0

    def factors(w, on_lattice, offset):
        """(weight factor, derivative factor) of one axis for a neighbour offset."""
        if offset == 0:
            return 1.0 - w, np.where(on_lattice, 0.0, -1.0)
        if offset == 1:
            return w, np.where(on_lattice, 0.5, 1.0)
        return np.zeros_like(w), np.where(on_lattice, -0.5, 0.0)

    n = y.size
    flat = np.zeros((len(NEIGHBOURS), n), dtype=np.int64)
    weights = np.zeros((len(NEIGHBOURS), n))
    dwy = np.zeros((len(NEIGHBOURS), n))
    dwx = np.zeros((len(NEIGHBOURS), n))
    values = np.zeros((len(NEIGHBOURS), n, c))
    table = data.reshape(k * l, c)
    for i, (oy, ox) in enumerate(NEIGHBOURS):
        ny, nx = y0 + oy, x0 + ox
        inside = (ny >= 0) & (ny < k) & (nx >= 0) & (nx < l)
        fy, dfy = factors(wy, on_row, oy)
        fx, dfx = factors(wx, on_col, ox)
        weights[i] = np.where(inside, fy * fx, 0.0)
        dwy[i] = np.where(inside, dfy * fx, 0.0)
        dwx[i] = np.where(inside, fy * dfx, 0.0)
        flat[i] = np.where(inside, ny * l + nx, 0)
        values[i] = np.where(inside[:, None], table[flat[i]], 0.0)

    out = np.einsum("pn,pnc->nc", weights, values).reshape(out_shape + (c,))
    return out, _SampleCache((k, l, c), flat, weights, dwy, dwx, values)


def _sample_vjp(
    cache: _SampleCache, g_out: np.ndarray, want_data: bool = True
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pull an output gradient back to (g_rows, g_cols, g_data)."""
    k, l, c = cache.shape
    g = np.asarray(g_out, dtype=np.float64).reshape(-1, c)
    per_neighbor = np.einsum("pnc,nc->pn", cache.values, g)
    g_rows = np.sum(cache.dweights_dy * per_neighbor, axis=0)
    g_cols = np.sum(cache.dweights_dx * per_neighbor, axis=0)
    g_data = None
    if want_data:
        g_data = np.zeros((k * l, c))
        idx = cache.flat.ravel()
        for ch in range(c):
            contrib = (cache.weights * g[:, ch][None, :]).ravel()
            g_data[:, ch] = np.bincount(idx, weights=contrib, minlength=k * l)
        g_data = g_data.reshape(k, l, c)
    return g_rows, g_cols, g_data


def bilinear_sample(grid: SemanticGrid, coords: Tuple[np.ndarray, np.ndarray]) -> SemanticGrid:
    """
    Sample a grid at real (row, col) coordinates.

    Standard four-neighbour bilinear interpolation per channel; neighbours
    outside [0, k-1] x [0, l-1] contribute zero.

    Args:
        grid: Source grid
        coords: (rows, cols) arrays of equal 2D shape

    Returns:
        SemanticGrid of the coordinate arrays' shape with the same channels

    Raises:
        ValidationError: If coordinates are not finite 2D arrays of equal shape
    """
    rows, cols = (np.asarray(a, dtype=np.float64) for a in coords)
    if rows.shape != cols.shape or rows.ndim != 2:
        raise ValidationError("Coordinate arrays must be 2D with equal shapes")
    if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(cols))):
        raise ValidationError("Sampling coordinates must be finite")
    out, _ = _sample(grid.data, rows, cols)
    return SemanticGrid(out, grid.class_ids)


def bilinear_sample_vjp(
    data: np.ndarray, rows: np.ndarray, cols: np.ndarray, g_out: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradient of sum(g_out * sample(data, rows, cols)).

    Returns:
        (g_rows, g_cols, g_data) shaped like rows, cols and data
    """
    rows = np.asarray(rows, dtype=np.float64)
    _, cache = _sample(np.asarray(data, dtype=np.float64), rows, np.asarray(cols))
    g_rows, g_cols, g_data = _sample_vjp(cache, g_out)
    return g_rows.reshape(rows.shape), g_cols.reshape(rows.shape), g_data


def box_coordinate_map(box: BoxParams, shape: Shape) -> Tuple[np.ndarray, np.ndarray]:
    """
    Source coordinate of every output cell under the inverse box transform.

    The transform acts about the grid center ((k-1)/2, (l-1)/2).

    Returns:
        (rows, cols), each of the grid's shape
    """
    src_rows, src_cols, _ = _box_map_with_jacobian(box, shape)
    return src_rows, src_cols


def _box_map_with_jacobian(box: BoxParams, shape: Shape):
    """Box source map plus its derivatives wrt (tx, ty, rot, log_scale)."""
    k, l = _shape_of(shape)
    rc, cc = (k - 1) / 2.0, (l - 1) / 2.0
    row, col = np.meshgrid(np.arange(k, dtype=np.float64), np.arange(l, dtype=np.float64), indexing="ij")
    c, s = math.cos(box.rotation), math.sin(box.rotation)
    inv_s = math.exp(-box.log_scale)
    dx = col - cc - box.tx
    dy = row - rc - box.ty
    src_x = inv_s * (c * dx + s * dy) + cc
    src_y = inv_s * (-s * dx + c * dy) + rc

    # d/d(tx, ty, rot, log_scale) of (src_y, src_x)
    d_rows = np.stack(
        [
            np.full((k, l), inv_s * s),
            np.full((k, l), -inv_s * c),
            -(src_x - cc),
            -(src_y - rc),
        ]
    )
    d_cols = np.stack(
        [
            np.full((k, l), -inv_s * c),
            np.full((k, l), -inv_s * s),
            src_y - rc,
            -(src_x - cc),
        ]
    )
    return src_y, src_x, (d_rows, d_cols)


class WarpCache(NamedTuple):
    """Forward state needed for the warp gradient."""

    sample: _SampleCache
    d_rows: np.ndarray
    d_cols: np.ndarray
    u_r: np.ndarray
    u_c: np.ndarray
    shape: Tuple[int, int]


def warp_coordinates(params: WarpParams, shape: Shape) -> Tuple[np.ndarray, np.ndarray]:
    """Sampling coordinates of the composed warp: box map minus upsampled flow."""
    rows, cols, _ = _box_map_with_jacobian(params.box, shape)
    du, dv = params.flow.upsample(shape)
    return rows - du, cols - dv


def warp_data(data: np.ndarray, params: WarpParams) -> Tuple[np.ndarray, WarpCache]:
    """
    Raw warp of an array of shape (k, l, C).

    Returns:
        (warped array, cache for warp_data_vjp)
    """
    data = np.asarray(data, dtype=np.float64)
    k, l = data.shape[:2]
    rows, cols, (d_rows, d_cols) = _box_map_with_jacobian(params.box, (k, l))
    u_r = interpolation_matrix(k, params.flow.rows)
    u_c = interpolation_matrix(l, params.flow.cols)
    du = u_r @ params.flow.data[..., 0] @ u_c.T
    dv = u_r @ params.flow.data[..., 1] @ u_c.T
    out, cache = _sample(data, rows - du, cols - dv)
    return out, WarpCache(cache, d_rows, d_cols, u_r, u_c, (k, l))


def warp_data_vjp(
    cache: WarpCache, g_out: np.ndarray, want_data: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradient of sum(g_out * warp) wrt the parameter vector (and data).

    Returns:
        (g_params in WarpParams.to_vector order, g_data or None)
    """
    k, l = cache.shape
    g_rows, g_cols, g_data = _sample_vjp(cache.sample, g_out, want_data)
    g_rows = g_rows.reshape(k, l)
    g_cols = g_cols.reshape(k, l)

    g_box = np.einsum("pij,ij->p", cache.d_rows, g_rows) + np.einsum(
        "pij,ij->p", cache.d_cols, g_cols
    )
    # sampling coordinates subtract the flow
    g_du = -(cache.u_r.T @ g_rows @ cache.u_c)
    g_dv = -(cache.u_r.T @ g_cols @ cache.u_c)
    g_flow = np.stack([g_du, g_dv], axis=-1)
    return np.concatenate([g_box, g_flow.ravel()]), g_data


def warp_grid(grid: SemanticGrid, params: WarpParams) -> SemanticGrid:
    """Raw warp of a grid without renormalization or masking."""
    out, _ = warp_data(grid.data, params)
    return SemanticGrid(out, grid.class_ids)


def compose_and_warp(bev: BevMap, params: WarpParams) -> BevMap:
    """
    Warp a BEV map with the composed box + flow transform.

    The observed mask is warped with the same coordinates; cells whose warped
    mask reaches MASK_THRESHOLD keep their renormalized distribution and all
    other cells become unobserved.

    Args:
        bev: Map to warp
        params: Warp parameters

    Returns:
        Warped BevMap
    """
    if not np.all(np.isfinite(params.to_vector())):
        raise ValidationError("Warp parameters must be finite")
    rows, cols = warp_coordinates(params, bev.shape)
    warped, _ = _sample(bev.data, rows, cols)
    mask, _ = _sample(bev.observed.astype(np.float64)[..., None], rows, cols)
    mass = warped.sum(axis=2)
    keep = (mask[..., 0] >= MASK_THRESHOLD) & (mass > 0)
    out = np.zeros_like(warped)
    out[keep] = warped[keep] / mass[keep, None]
    return BevMap.from_grid(SemanticGrid(out, bev.class_ids))


def lowpass_regularizer(flow: FlowField) -> Tuple[float, np.ndarray]:
    """
    Mean squared first difference of the flow.

    Differences are taken along both grid directions for both components and
    averaged over all of them.

    Returns:
        (value, gradient of shape (rows, cols, 2))
    """
    f = flow.data
    d_r = f[1:] - f[:-1]
    d_c = f[:, 1:] - f[:, :-1]
    count = d_r.size + d_c.size
    grad = np.zeros_like(f)
    if count == 0:
        return 0.0, grad
    value = (np.sum(d_r**2) + np.sum(d_c**2)) / count
    scale = 2.0 / count
    grad[1:] += scale * d_r
    grad[:-1] -= scale * d_r
    grad[:, 1:] += scale * d_c
    grad[:, :-1] -= scale * d_c
    return float(value), grad


def l2_regularizer(params: WarpParams) -> Tuple[float, np.ndarray]:
    """
    Squared l2 norm of every warp parameter.

    Returns:
        (value, gradient 2 * theta in WarpParams.to_vector order)
    """
    v = params.to_vector()
    return float(v @ v), 2.0 * v
