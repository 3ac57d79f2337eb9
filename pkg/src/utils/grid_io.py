"""
Grid file I/O.
Reads and writes label maps (binary PGM), class-probability grids and depth
maps in small self-describing binary formats.

Formats:
    label-pgm: binary PGM (P5), 8-bit, class ids as pixel values
    prob-bin:  "PROB <h> <w> <c> [ids...]\\n" + row-major float64 little-endian
    depth-bin: "DEPTH <h> <w>\\n" + row-major float64 little-endian, NaN = invalid
"""

import logging
import os
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from src.data_structures.grids import (
    NORMALIZATION_TOL,
    BevMap,
    DepthMap,
    LabelGrid,
    SemanticGrid,
)
from src.utils.errors import GridFormatError, ValidationError

logger = logging.getLogger(__name__)

LABEL_PGM = "label-pgm"
PROB_BIN = "prob-bin"
DEPTH_BIN = "depth-bin"
FORMATS = (LABEL_PGM, PROB_BIN, DEPTH_BIN)

_SUFFIXES = {".pgm": LABEL_PGM, ".prob": PROB_BIN, ".depth": DEPTH_BIN}

Grid = Union[SemanticGrid, LabelGrid, DepthMap]


def infer_format(path: Union[str, Path]) -> str:
    """
    Guess the grid format from a file suffix (.pgm, .prob, .depth).

    Raises:
        ValidationError: If the suffix is not recognised
    """
    suffix = Path(path).suffix.lower()
    if suffix not in _SUFFIXES:
        raise ValidationError(f"Cannot infer grid format from suffix '{suffix}'")
    return _SUFFIXES[suffix]


def _split_header(raw: bytes, path: str) -> Tuple[List[str], bytes]:
    """Split an ASCII header line from the binary payload."""
    newline = raw.find(b"\n")
    if newline < 0:
        raise GridFormatError("missing header line", path)
    try:
        tokens = raw[:newline].decode("ascii").split()
    except UnicodeDecodeError:
        raise GridFormatError("header is not ASCII", path) from None
    return tokens, raw[newline + 1 :]


def _parse_dims(tokens: List[str], path: str) -> List[int]:
    try:
        dims = [int(t) for t in tokens]
    except ValueError:
        raise GridFormatError(f"non-integer header field in {tokens}", path) from None
    if any(d <= 0 for d in dims):
        raise GridFormatError(f"dimensions must be positive, got {dims}", path)
    return dims


def _read_floats(payload: bytes, count: int, path: str) -> np.ndarray:
    expected = count * 8
    if len(payload) != expected:
        raise GridFormatError(
            f"dimension mismatch: expected {expected} data bytes, found {len(payload)}",
            path,
        )
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def _parse_pgm(raw: bytes, path: str) -> LabelGrid:
    """Parse a binary P5 PGM, skipping '#' comments in the header."""
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise GridFormatError("truncated PGM header", path)
        if raw[pos : pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])

    if tokens[0] != b"P5":
        raise GridFormatError(f"expected magic P5, got {tokens[0]!r}", path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise GridFormatError("non-integer PGM header field", path) from None
    if width <= 0 or height <= 0:
        raise GridFormatError("PGM dimensions must be positive", path)
    if not 0 < maxval <= 255:
        raise GridFormatError(f"only 8-bit PGM is supported (maxval {maxval})", path)

    # exactly one whitespace byte separates the header from the data
    data = raw[pos + 1 :]
    if len(data) != width * height:
        raise GridFormatError(
            f"dimension mismatch: expected {width * height} pixels, found {len(data)}",
            path,
        )
    labels = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    return LabelGrid(labels.astype(np.int64))


def _parse_prob(raw: bytes, path: str) -> SemanticGrid:
    tokens, payload = _split_header(raw, path)
    if len(tokens) < 4 or tokens[0] != "PROB":
        raise GridFormatError(f"malformed PROB header {tokens}", path)
    h, w, c = _parse_dims(tokens[1:4], path)
    if len(tokens) == 4:
        class_ids = tuple(range(c))
    else:
        try:
            class_ids = tuple(int(t) for t in tokens[4:])
        except ValueError:
            raise GridFormatError("non-integer class id in header", path) from None
        if len(class_ids) != c:
            raise GridFormatError(f"{len(class_ids)} class ids for {c} channels", path)

    data = _read_floats(payload, h * w * c, path).reshape(h, w, c)
    if not np.all(np.isfinite(data)) or np.any(data < 0):
        raise GridFormatError("probabilities must be finite and nonnegative", path)
    mass = data.sum(axis=2)
    observed = mass > 0
    if np.any(np.abs(mass[observed] - 1.0) > NORMALIZATION_TOL):
        raise GridFormatError("non-normalized probability row", path)
    try:
        return SemanticGrid(data, class_ids)
    except ValidationError as exc:
        raise GridFormatError(str(exc), path) from exc


def _parse_depth(raw: bytes, path: str) -> DepthMap:
    tokens, payload = _split_header(raw, path)
    if len(tokens) != 3 or tokens[0] != "DEPTH":
        raise GridFormatError(f"malformed DEPTH header {tokens}", path)
    h, w = _parse_dims(tokens[1:3], path)
    depth = _read_floats(payload, h * w, path).reshape(h, w)
    try:
        return DepthMap.from_array(depth)
    except ValidationError as exc:
        raise GridFormatError(str(exc), path) from exc


def load_grid(path: Union[str, Path], format: Optional[str] = None) -> Grid:
    """
    Load a grid file.

    Args:
        path: File to read
        format: One of FORMATS; inferred from the suffix when None

    Returns:
        LabelGrid, SemanticGrid or DepthMap depending on the format

    Raises:
        FileNotFoundError: If file does not exist
        GridFormatError: If the header or payload is malformed or invalid
    """
    path = str(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")
    format = format or infer_format(path)

    with open(path, "rb") as f:
        raw = f.read()

    if format == LABEL_PGM:
        grid = _parse_pgm(raw, path)
    elif format == PROB_BIN:
        grid = _parse_prob(raw, path)
    elif format == DEPTH_BIN:
        grid = _parse_depth(raw, path)
    else:
        raise ValidationError(f"Unknown grid format '{format}', expected one of {FORMATS}")

    logger.debug("Loaded %s grid %s from %s", format, grid.shape, path)
    return grid


def save_grid(
    grid: Union[Grid, BevMap], path: Union[str, Path], format: Optional[str] = None
) -> None:
    """
    Write a grid file.

    Args:
        grid: LabelGrid for label-pgm, SemanticGrid or BevMap for prob-bin,
              DepthMap for depth-bin
        path: Destination
        format: One of FORMATS; inferred from the suffix when None

    Raises:
        ValidationError: If the grid type does not fit the format or labels
                         exceed 8 bits
    """
    path = Path(path)
    format = format or infer_format(path)
    if isinstance(grid, BevMap):
        grid = grid.grid

    if format == LABEL_PGM:
        if not isinstance(grid, LabelGrid):
            raise ValidationError("label-pgm needs a LabelGrid")
        if grid.labels.size and (grid.labels.min() < 0 or grid.labels.max() > 255):
            raise ValidationError("label-pgm stores ids 0..255 only")
        header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
        body = grid.labels.astype(np.uint8).tobytes()
    elif format == PROB_BIN:
        if not isinstance(grid, SemanticGrid):
            raise ValidationError("prob-bin needs a SemanticGrid")
        fields = [f"PROB {grid.height} {grid.width} {grid.channels}"]
        if grid.class_ids != tuple(range(grid.channels)):
            fields.extend(str(i) for i in grid.class_ids)
        header = (" ".join(fields) + "\n").encode("ascii")
        body = grid.data.astype("<f8").tobytes()
    elif format == DEPTH_BIN:
        if not isinstance(grid, DepthMap):
            raise ValidationError("depth-bin needs a DepthMap")
        header = f"DEPTH {grid.height} {grid.width}\n".encode("ascii")
        body = grid.depth.astype("<f8").tobytes()
    else:
        raise ValidationError(f"Unknown grid format '{format}', expected one of {FORMATS}")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header + body)
    logger.debug("Saved %s grid %s to %s", format, grid.shape, path)


def load_bev(path: Union[str, Path]) -> BevMap:
    """
    Load a prob-bin file as a BevMap (observed mask derived from mass).

    Raises:
        GridFormatError: If the file is not a valid prob-bin grid
    """
    grid = load_grid(path, PROB_BIN)
    return BevMap.from_grid(grid)
