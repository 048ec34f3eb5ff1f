"""
Boundary-quality metrics: mask IoU, Boundary IoU, boundary distances, corner error.

Boundary IoU here is a per-instance proxy: each mask is reduced to the band
of its own pixels within Chebyshev distance d of its boundary, and the two
bands are compared by IoU.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from config import settings
from sharpcontour import geometry
from sharpcontour.errors import GeometryError
from sharpcontour.geometry import Point2, Shape, ShapeLike
from sharpcontour.raster import MaskGrid, rasterize

logger = logging.getLogger(__name__)


def _binary_pair(a: MaskGrid, b: MaskGrid) -> tuple[np.ndarray, np.ndarray]:
    if a.values.shape != b.values.shape:
        raise GeometryError(f"mask sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    return a.binary(), b.binary()


def _iou(x: np.ndarray, y: np.ndarray) -> float:
    union = np.count_nonzero(x | y)
    if union == 0:
        return 1.0
    return np.count_nonzero(x & y) / union


def mask_iou(a: MaskGrid, b: MaskGrid) -> float:
    x, y = _binary_pair(a, b)
    return _iou(x, y)


def default_band(width: int, height: int) -> int:
    return max(1, int(round(settings.BOUNDARY_IOU_FRACTION * math.hypot(width, height))))


def inner_band(mask: np.ndarray, d: int) -> np.ndarray:
    """Foreground pixels within Chebyshev distance d of the background (image border counts as background)."""
    structure = np.ones((2 * d + 1, 2 * d + 1), dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def boundary_iou(a: MaskGrid, b: MaskGrid, d: Optional[int] = None) -> float:
    x, y = _binary_pair(a, b)
    d = default_band(a.width, a.height) if d is None else int(d)
    if d < 1:
        raise GeometryError(f"boundary band must be >= 1 px, got {d}")
    return _iou(inner_band(x, d), inner_band(y, d))


@dataclass(frozen=True)
class DistanceStats:
    mean: float
    median: float
    max: float
    hausdorff: float


@dataclass(frozen=True)
class CornerStats:
    mean: float
    max: float
    per_corner: tuple[float, ...]


def _dense_samples(shape: ShapeLike) -> np.ndarray:
    return np.concatenate([geometry.resample(r, settings.HAUSDORFF_SAMPLES).vertices
                           for r in geometry.as_rings(shape)])


def boundary_distance_stats(pred: ShapeLike, gt: ShapeLike) -> DistanceStats:
    """|signed distance to gt| per pred vertex, plus a symmetric Hausdorff distance from dense samples."""
    vertices = np.concatenate([r.vertices for r in geometry.as_rings(pred)])
    per_vertex = np.abs(geometry.signed_distances(gt, vertices))
    forward = geometry.polyline_distances(gt, _dense_samples(pred)).max()
    backward = geometry.polyline_distances(pred, _dense_samples(gt)).max()
    return DistanceStats(
        mean=float(per_vertex.mean()),
        median=float(np.median(per_vertex)),
        max=float(per_vertex.max()),
        hausdorff=float(max(forward, backward)),
    )


def corner_error(pred: ShapeLike, gt_corners: Sequence[Point2]) -> CornerStats:
    """Distance from each ground-truth corner to the nearest point of the predicted polyline."""
    if not gt_corners:
        raise GeometryError("corner error needs at least one corner")
    distances = geometry.polyline_distances(pred, np.array([c.as_array() for c in gt_corners]))
    return CornerStats(float(distances.mean()), float(distances.max()), tuple(float(d) for d in distances))


@dataclass
class MetricsReport:
    instance: str
    method: str
    config_hash: str
    mask_iou: float
    boundary_iou: float
    mean_distance: float
    median_distance: float
    max_distance: float
    hausdorff: float
    corner_error_mean: float
    corner_error_max: float
    frozen_fraction: float
    self_intersection_count: int
    runtime_ms: Optional[float] = None

    def to_row(self, with_runtime: bool = False) -> dict:
        row = asdict(self)
        if not with_runtime:
            row.pop('runtime_ms')
        return row


def evaluate_instance(pred: ShapeLike, gt: ShapeLike, width: int, height: int, *,
                      instance: str = '0', method: str = 'sharpcontour', config_hash: str = '',
                      frozen_fraction: float = float('nan'), runtime_ms: Optional[float] = None,
                      d: Optional[int] = None) -> MetricsReport:
    """All metrics for one predicted instance against its ground truth on a width x height canvas."""
    pred_mask = rasterize(pred, width, height)
    gt_mask = rasterize(gt, width, height)
    distances = boundary_distance_stats(pred, gt)
    corners = gt.corners if isinstance(gt, Shape) else ()
    if corners:
        corner = corner_error(pred, corners)
        corner_mean, corner_max = corner.mean, corner.max
    else:
        corner_mean = corner_max = float('nan')

    report = MetricsReport(
        instance=str(instance),
        method=method,
        config_hash=config_hash,
        mask_iou=mask_iou(pred_mask, gt_mask),
        boundary_iou=boundary_iou(pred_mask, gt_mask, d),
        mean_distance=distances.mean,
        median_distance=distances.median,
        max_distance=distances.max,
        hausdorff=distances.hausdorff,
        corner_error_mean=corner_mean,
        corner_error_max=corner_max,
        frozen_fraction=frozen_fraction,
        self_intersection_count=sum(geometry.self_intersection_count(r) for r in geometry.as_rings(pred)),
        runtime_ms=runtime_ms,
    )
    logger.debug("Instance %s (%s): IoU %.4f, boundary IoU %.4f, mean distance %.3f px",
                 report.instance, method, report.mask_iou, report.boundary_iou, report.mean_distance)
    return report
