"""
Mask grids, mask -> contour extraction, polygon rasterization, PGM I/O.

Rasters are stored image-style (row 0 at the top). Cell (row, col) covers
x in [col, col + 1] and y_image in [row, row + 1]; its sample point is the
cell center. Converting to math coordinates flips the y axis:
y_math = -y_image. That conversion happens here and nowhere else.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from skimage import measure

from config import settings
from sharpcontour import geometry
from sharpcontour.errors import GeometryError, ParseError
from sharpcontour.files import atomic_write
from sharpcontour.geometry import Point2, Polygon, ShapeLike

logger = logging.getLogger(__name__)


def image_to_math(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.column_stack([pts[:, 0], -pts[:, 1]])


def math_to_image(points) -> np.ndarray:
    # the y flip is its own inverse
    return image_to_math(points)


def cell_center(row: int, col: int) -> Point2:
    return Point2(col + 0.5, -(row + 0.5))


@dataclass(frozen=True)
class MaskGrid:
    """Binary or probability raster, values in [0, 1], shape (height, width)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise GeometryError(f"mask grid must be a non-empty 2D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
            raise GeometryError("mask values must lie in [0, 1]")
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, width: int, height: int) -> MaskGrid:
        return cls(np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def binary(self, threshold: float = 0.5) -> np.ndarray:
        return self.values > threshold

    def foreground_count(self, threshold: float = 0.5) -> int:
        return int(np.count_nonzero(self.binary(threshold)))


# ── Mask -> contours ───────────────────────────────────────────────────

def refine_bilinear(values: np.ndarray) -> np.ndarray:
    """2x refinement with exact bilinear midpoints; sample (i, j) of the input lands at (2i, 2j)."""
    h, w = values.shape
    refined = np.empty((2 * h - 1, 2 * w - 1))
    refined[::2, ::2] = values
    refined[1::2, ::2] = 0.5 * (values[:-1] + values[1:])
    refined[:, 1::2] = 0.5 * (refined[:, :-1:2] + refined[:, 2::2])
    return refined


def saddle_connectivity(refined: np.ndarray, level: float) -> str:
    """
    Connectivity that settles the saddle cells left in a refined grid.

    Each refined cell has one corner at the centre of its source cell (odd
    row and column), and a saddle joins the diagonal of that corner, so a
    source cell whose centre mean is above the level keeps its high corners
    together.
    """
    above = refined > level
    ul, ur, ll, lr = above[:-1, :-1], above[:-1, 1:], above[1:, :-1], above[1:, 1:]
    rows, cols = np.nonzero((ul == lr) & (ur == ll) & (ul != ur))
    if not len(rows):
        return 'low'
    high = int(np.count_nonzero(above[rows | 1, cols | 1]))
    if 0 < high < len(rows):
        # find_contours takes one rule per call; the minority is settled the other way
        logger.warning("%d saddle cells join high corners and %d join low ones; using the majority",
                       high, len(rows) - high)
    return 'high' if 2 * high > len(rows) else 'low'


def mask_to_contours(m: MaskGrid, threshold: float = 0.5) -> list[Polygon]:
    """
    Marching-squares isocontours of the bilinear field at `threshold`.

    Saddle cells are split by their centre value (mean of the four corners).
    The grid is refined 2x with bilinear midpoints first; vertices stay on the
    bilinear iso-level because the field is linear along grid lines.

    Outer rings come back CCW, hole rings CW. Tiny rings (fewer than
    MIN_RING_VERTICES vertices or a bbox diagonal under MIN_RING_DIAGONAL px)
    are dropped.
    """
    # zero border so every ring closes inside the array
    padded = np.pad(m.values, 1, mode='constant', constant_values=0.0)
    refined = refine_bilinear(padded)
    raw = measure.find_contours(refined, level=threshold,
                                fully_connected=saddle_connectivity(refined, threshold))

    rings = []
    for contour in raw:
        # (row, col) in refined index space -> image (x, y) at cell centers
        image_xy = np.column_stack([0.5 * contour[:, 1] - 0.5, 0.5 * contour[:, 0] - 0.5])
        try:
            ring = Polygon.from_points(image_to_math(image_xy))
        except GeometryError:
            continue
        box = geometry.bbox(ring)
        if len(ring) < settings.MIN_RING_VERTICES or box.diagonal < settings.MIN_RING_DIAGONAL:
            continue
        rings.append(ring)

    oriented = geometry.orient_rings(rings)

    logger.debug("Extracted %d rings (%d raw contours) at level %.3f", len(oriented), len(raw), threshold)
    return oriented


# ── Polygon -> mask ────────────────────────────────────────────────────

def rasterize(shape: ShapeLike, width: int, height: int) -> MaskGrid:
    """Even-odd scanline fill sampled at cell centers, over all rings."""
    if width < 1 or height < 1:
        raise GeometryError("raster size must be at least 1x1")
    rings = geometry.as_rings(shape)
    starts = np.concatenate([r.vertices for r in rings])
    ends = np.concatenate([np.roll(r.vertices, -1, axis=0) for r in rings])
    x0, y0 = starts[:, 0], starts[:, 1]
    x1, y1 = ends[:, 0], ends[:, 1]

    centers_x = np.arange(width) + 0.5
    out = np.zeros((height, width))
    for row in range(height):
        y = -(row + 0.5)
        straddle = (y0 > y) != (y1 > y)
        if not np.any(straddle):
            continue
        xs = x0[straddle] + (y - y0[straddle]) * (x1[straddle] - x0[straddle]) / (y1[straddle] - y0[straddle])
        xs.sort()
        # a center is inside when an odd number of crossings lie to its left
        left = np.searchsorted(xs, centers_x, side='left')
        out[row] = (left % 2 == 1)
    return MaskGrid(out)


# ── PGM I/O ────────────────────────────────────────────────────────────

_TOKEN = re.compile(rb'\s*(?:#[^\n]*\n\s*)*(\S+)')


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, at = [], 0
    for _ in range(count):
        match = _TOKEN.match(data, at)
        if match is None:
            raise ParseError("truncated PGM header", offset=at)
        tokens.append(match.group(1))
        at = match.end()
    return tokens, at


def parse_pgm(data: bytes) -> MaskGrid:
    """Decode plain (P2) or binary (P5) PGM bytes; value = gray / maxval."""
    tokens, at = _header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b'P2', b'P5'):
        raise ParseError(f"unsupported magic {magic!r}, expected P2 or P5", offset=0)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"non-numeric PGM header field: {exc}", offset=at) from exc
    if width < 1 or height < 1:
        raise ParseError(f"invalid PGM size {width}x{height}", offset=at)
    if not 1 <= maxval <= 255:
        raise ParseError(f"maxval {maxval} unsupported (only 8-bit PGM)", offset=at)

    expected = width * height
    if magic == b'P5':
        start = at + 1  # single whitespace byte after maxval
        raw = data[start:start + expected]
        if len(raw) < expected:
            raise ParseError(f"expected {expected} samples, found {len(raw)}", offset=len(data))
        gray = np.frombuffer(raw, dtype=np.uint8).astype(int)
    else:
        body = data[at:]
        fields = body.split()
        if len(fields) < expected:
            raise ParseError(f"expected {expected} samples, found {len(fields)}", offset=len(data))
        try:
            gray = np.array([int(f) for f in fields[:expected]])
        except ValueError as exc:
            raise ParseError(f"non-numeric PGM sample: {exc}", offset=at) from exc

    if gray.max(initial=0) > maxval or gray.min(initial=0) < 0:
        raise ParseError(f"sample outside [0, {maxval}]", offset=at)
    return MaskGrid(gray.reshape(height, width) / float(maxval))


def encode_pgm(grid: MaskGrid, plain: bool = False) -> bytes:
    gray = np.rint(grid.values * 255.0).astype(np.uint8)
    if plain:
        rows = '\n'.join(' '.join(str(v) for v in row) for row in gray)
        return f"P2\n{grid.width} {grid.height}\n255\n{rows}\n".encode('ascii')
    return f"P5\n{grid.width} {grid.height}\n255\n".encode('ascii') + gray.tobytes()


def read_pgm(path: Union[str, Path]) -> MaskGrid:
    return parse_pgm(Path(path).read_bytes())


def write_pgm(grid: MaskGrid, path: Union[str, Path], plain: bool = False) -> Path:
    return atomic_write(path, encode_pgm(grid, plain=plain))
