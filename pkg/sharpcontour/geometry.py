"""
Closed-polygon primitives.

Everything here works in math coordinates (x right, y up). Image
coordinates are converted at the raster / document boundary only.
All functions are pure; polygons are immutable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, Union

import numpy as np

from config import settings
from sharpcontour.errors import GeometryError

logger = logging.getLogger(__name__)

# Upper bound on (points x segments) elements materialized per distance chunk
_CHUNK_ELEMENTS = 2_000_000


class Orientation(str, Enum):
    CCW = 'ccw'
    CW = 'cw'


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class BBox:
    min: Point2
    max: Point2

    def __post_init__(self):
        if self.max.x < self.min.x or self.max.y < self.min.y:
            raise GeometryError("bbox max must not be below min")

    @property
    def width(self) -> float:
        return self.max.x - self.min.x

    @property
    def height(self) -> float:
        return self.max.y - self.min.y

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def translated(self, dx: float, dy: float) -> BBox:
        return BBox(Point2(self.min.x + dx, self.min.y + dy),
                    Point2(self.max.x + dx, self.max.y + dy))


class Polygon:
    """Closed vertex loop; the last vertex connects back to the first."""

    __slots__ = ('_vertices',)

    def __init__(self, vertices: Union[np.ndarray, Sequence[Sequence[float]]]):
        arr = np.array(vertices, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise GeometryError(f"expected an (n, 2) vertex array, got shape {arr.shape}")
        if len(arr) < 3:
            raise GeometryError(f"polygon needs at least 3 vertices, got {len(arr)}")
        if not np.all(np.isfinite(arr)):
            raise GeometryError("polygon has non-finite vertices")
        gaps = np.linalg.norm(np.roll(arr, -1, axis=0) - arr, axis=1)
        if np.any(gaps <= settings.COINCIDENT_TOLERANCE):
            i = int(np.argmax(gaps <= settings.COINCIDENT_TOLERANCE))
            raise GeometryError(f"consecutive vertices {i} and {(i + 1) % len(arr)} coincide")
        arr.flags.writeable = False
        self._vertices = arr

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> Polygon:
        """Build a polygon, dropping repeated consecutive points and a closing duplicate."""
        arr = np.array(list(points), dtype=float).reshape(-1, 2)
        keep = [0] if len(arr) else []
        for i in range(1, len(arr)):
            if np.linalg.norm(arr[i] - arr[keep[-1]]) > settings.COINCIDENT_TOLERANCE:
                keep.append(i)
        arr = arr[keep]
        while len(arr) > 1 and np.linalg.norm(arr[-1] - arr[0]) <= settings.COINCIDENT_TOLERANCE:
            arr = arr[:-1]
        return cls(arr)

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    def __len__(self) -> int:
        return len(self._vertices)

    def __repr__(self) -> str:
        return f"Polygon(n={len(self)}, orientation={self.orientation.value}, area={self.signed_area:.3f})"

    @property
    def signed_area(self) -> float:
        x = self._vertices[:, 0]
        y = self._vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def orientation(self) -> Orientation:
        return Orientation.CCW if self.signed_area > 0 else Orientation.CW

    @property
    def perimeter(self) -> float:
        return float(np.sum(self.edge_lengths()))

    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.roll(self._vertices, -1, axis=0) - self._vertices, axis=1)

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        return self._vertices, np.roll(self._vertices, -1, axis=0)

    def reversed(self) -> Polygon:
        return Polygon(self._vertices[::-1])

    def with_orientation(self, orientation: Orientation) -> Polygon:
        return self if self.orientation == orientation else self.reversed()

    def translated(self, dx: float, dy: float) -> Polygon:
        return Polygon(self._vertices + np.array([dx, dy]))

    def centroid(self) -> Point2:
        v = self._vertices
        nxt = np.roll(v, -1, axis=0)
        cross = v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]
        area = 0.5 * cross.sum()
        if abs(area) < settings.MIN_PERIMETER:
            mean = v.mean(axis=0)
            return Point2(float(mean[0]), float(mean[1]))
        cx = np.sum((v[:, 0] + nxt[:, 0]) * cross) / (6.0 * area)
        cy = np.sum((v[:, 1] + nxt[:, 1]) * cross) / (6.0 * area)
        return Point2(float(cx), float(cy))


@dataclass(frozen=True)
class Shape:
    """An outer ring plus hole rings, with optional labelled corner points."""

    outer: Polygon
    holes: tuple[Polygon, ...] = ()
    corners: tuple[Point2, ...] = ()

    @classmethod
    def from_rings(cls, rings: Sequence[Polygon], corners: Sequence[Point2] = ()) -> Shape:
        if not rings:
            raise GeometryError("shape needs at least one ring")
        outer = rings[0].with_orientation(Orientation.CCW)
        holes = tuple(r.with_orientation(Orientation.CW) for r in rings[1:])
        return cls(outer, holes, tuple(corners))

    @property
    def rings(self) -> tuple[Polygon, ...]:
        return (self.outer,) + self.holes

    def translated(self, dx: float, dy: float) -> Shape:
        return Shape(
            self.outer.translated(dx, dy),
            tuple(h.translated(dx, dy) for h in self.holes),
            tuple(Point2(c.x + dx, c.y + dy) for c in self.corners),
        )


ShapeLike = Union[Polygon, Shape, Sequence[Polygon]]


def as_rings(shape: ShapeLike) -> list[Polygon]:
    if isinstance(shape, Polygon):
        return [shape]
    if isinstance(shape, Shape):
        return list(shape.rings)
    rings = list(shape)
    if not rings or not all(isinstance(r, Polygon) for r in rings):
        raise GeometryError("expected a Polygon, a Shape, or a non-empty sequence of Polygons")
    return rings


def _stacked_segments(rings: Sequence[Polygon]) -> tuple[np.ndarray, np.ndarray]:
    starts, ends = zip(*(r.segments() for r in rings))
    return np.concatenate(starts), np.concatenate(ends)


def regular_polygon(center: tuple[float, float], radius: float, n: int, phase: float = 0.0) -> Polygon:
    """CCW regular n-gon inscribed in a circle; vertex 0 at angle `phase`."""
    if n < 3 or radius <= 0:
        raise GeometryError("regular polygon needs n >= 3 and radius > 0")
    angles = phase + 2.0 * np.pi * np.arange(n) / n
    return Polygon(np.column_stack([center[0] + radius * np.cos(angles),
                                    center[1] + radius * np.sin(angles)]))


def resample(p: Polygon, n: int) -> Polygon:
    """Uniform arc-length resampling to n vertices, starting at vertex 0."""
    if n < 3:
        raise GeometryError(f"resample needs n >= 3, got {n}")
    closed = np.vstack([p.vertices, p.vertices[:1]])
    cumulative = np.concatenate([[0.0], np.cumsum(p.edge_lengths())])
    total = cumulative[-1]
    if total < settings.MIN_PERIMETER:
        raise GeometryError("degenerate polygon")
    targets = np.arange(n) * (total / n)
    x = np.interp(targets, cumulative, closed[:, 0])
    y = np.interp(targets, cumulative, closed[:, 1])
    return Polygon(np.column_stack([x, y]))


def vertex_normals(p: Polygon) -> np.ndarray:
    """
    Outward unit normals for every vertex, shape (n, 2).

    Bisector of the two incident edges: the normalized sum of the unit
    edge directions, rotated -90 degrees. On CCW rings this points away
    from the enclosed region; on CW (hole) rings it points into the hole.
    """
    v = p.vertices
    incoming = v - np.roll(v, 1, axis=0)
    outgoing = np.roll(v, -1, axis=0) - v
    u_in = incoming / np.linalg.norm(incoming, axis=1, keepdims=True)
    u_out = outgoing / np.linalg.norm(outgoing, axis=1, keepdims=True)
    tangent = u_in + u_out
    length = np.linalg.norm(tangent, axis=1)
    # hairpin vertex: the bisector vanishes, use the outgoing edge
    hairpin = length < 1e-12
    tangent[hairpin] = u_out[hairpin]
    length[hairpin] = 1.0
    tangent /= length[:, None]
    return np.column_stack([tangent[:, 1], -tangent[:, 0]])


def vertex_normal(p: Polygon, i: int) -> np.ndarray:
    """Outward unit normal at vertex i, skipping zero-length incident edges."""
    v = p.vertices
    n = len(v)
    if not 0 <= i < n:
        raise GeometryError(f"vertex index {i} out of range for {n} vertices")
    tol = settings.COINCIDENT_TOLERANCE

    u_in = u_out = None
    for k in range(1, n):
        d = v[i] - v[(i - k) % n]
        if np.linalg.norm(d) > tol:
            u_in = d / np.linalg.norm(d)
            break
    for k in range(1, n):
        d = v[(i + k) % n] - v[i]
        if np.linalg.norm(d) > tol:
            u_out = d / np.linalg.norm(d)
            break
    if u_in is None or u_out is None:
        raise GeometryError("undefined normal")

    tangent = u_in + u_out
    length = np.linalg.norm(tangent)
    if length < 1e-12:
        tangent, length = u_out, 1.0
    tangent = tangent / length
    return np.array([tangent[1], -tangent[0]])


def _closest_on_segments(points: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    seg = ends - starts
    seg_len2 = np.einsum('ij,ij->i', seg, seg)
    seg_len2 = np.where(seg_len2 > 0, seg_len2, 1.0)

    distances = np.empty(len(points))
    closest = np.empty((len(points), 2))
    chunk = max(1, _CHUNK_ELEMENTS // max(len(starts), 1))
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk, None, :]
        rel = p - starts[None, :, :]
        t = np.clip(np.einsum('cmk,mk->cm', rel, seg) / seg_len2, 0.0, 1.0)
        proj = starts[None, :, :] + t[..., None] * seg[None, :, :]
        d2 = np.sum((p - proj) ** 2, axis=-1)
        idx = np.argmin(d2, axis=1)
        rows = np.arange(len(idx))
        distances[lo:lo + chunk] = np.sqrt(d2[rows, idx])
        closest[lo:lo + chunk] = proj[rows, idx]
    return distances, closest


def _crossing_parity(points: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    inside = np.zeros(len(points), dtype=bool)
    x0, y0 = starts[:, 0][None, :], starts[:, 1][None, :]
    x1, y1 = ends[:, 0][None, :], ends[:, 1][None, :]
    chunk = max(1, _CHUNK_ELEMENTS // max(len(starts), 1))
    for lo in range(0, len(points), chunk):
        x = points[lo:lo + chunk, 0:1]
        y = points[lo:lo + chunk, 1:2]
        straddle = (y0 > y) != (y1 > y)
        with np.errstate(divide='ignore', invalid='ignore'):
            x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        hits = straddle & (x < x_cross)
        inside[lo:lo + chunk] = (np.count_nonzero(hits, axis=1) % 2) == 1
    return inside


def _as_points(points) -> np.ndarray:
    if isinstance(points, Point2):
        return points.as_array()[None, :]
    arr = np.asarray(points, dtype=float)
    return arr.reshape(-1, 2)


def contains(shape: ShapeLike, points) -> np.ndarray:
    """Even-odd containment over all rings of the shape."""
    starts, ends = _stacked_segments(as_rings(shape))
    return _crossing_parity(_as_points(points), starts, ends)


def point_in_polygon(shape: ShapeLike, q: Point2) -> bool:
    return bool(contains(shape, q)[0])


def polyline_distances(shape: ShapeLike, points) -> np.ndarray:
    starts, ends = _stacked_segments(as_rings(shape))
    distances, _ = _closest_on_segments(_as_points(points), starts, ends)
    return distances


def closest_points(shape: ShapeLike, points) -> np.ndarray:
    """Nearest point on any ring's polyline, per query point."""
    starts, ends = _stacked_segments(as_rings(shape))
    _, closest = _closest_on_segments(_as_points(points), starts, ends)
    return closest


def signed_distances(shape: ShapeLike, points) -> np.ndarray:
    """Vectorized signed distance: positive outside, negative inside, 0 on the polyline."""
    pts = _as_points(points)
    starts, ends = _stacked_segments(as_rings(shape))
    distances, _ = _closest_on_segments(pts, starts, ends)
    inside = _crossing_parity(pts, starts, ends)
    signed = np.where(inside, -distances, distances)
    return np.where(distances <= settings.BOUNDARY_TOLERANCE, 0.0, signed)


def signed_distance(shape: ShapeLike, q: Point2) -> float:
    return float(signed_distances(shape, q)[0])


def bbox(obj: Union[ShapeLike, np.ndarray, Sequence[Sequence[float]]]) -> BBox:
    """Tight axis-aligned box of the vertices (or of a raw point set)."""
    if isinstance(obj, (Polygon, Shape)):
        pts = np.concatenate([r.vertices for r in as_rings(obj)])
    elif isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], Polygon):
        pts = np.concatenate([r.vertices for r in obj])
    else:
        pts = _as_points(obj)
    if len(pts) == 0:
        raise GeometryError("bbox of an empty point set")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return BBox(Point2(float(lo[0]), float(lo[1])), Point2(float(hi[0]), float(hi[1])))


def self_intersection_count(p: Polygon) -> int:
    """Number of properly crossing non-adjacent edge pairs (brute force)."""
    a, b = p.segments()
    n = len(a)
    d = b - a

    def cross(u, w):
        return u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0]

    # orientation of segment j's endpoints relative to segment i, and vice versa
    o1 = cross(d[:, None, :], a[None, :, :] - a[:, None, :])
    o2 = cross(d[:, None, :], b[None, :, :] - a[:, None, :])
    o3 = cross(d[None, :, :], a[:, None, :] - a[None, :, :])
    o4 = cross(d[None, :, :], b[:, None, :] - a[None, :, :])
    crossing = (o1 * o2 < 0) & (o3 * o4 < 0)

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    return int(np.count_nonzero(crossing[i[keep], j[keep]]))


def orient_rings(rings: Sequence[Polygon]) -> list[Polygon]:
    """Orient by nesting depth: even depth (outer boundaries) CCW, odd depth (holes) CW."""
    oriented = []
    for i, ring in enumerate(rings):
        point = ring.vertices[0]
        depth = sum(1 for j, other in enumerate(rings) if j != i and contains(other, point)[0])
        oriented.append(ring.with_orientation(Orientation.CCW if depth % 2 == 0 else Orientation.CW))
    return oriented
