import math

import numpy as np
import pytest

from sharpcontour import geometry, harness, metrics
from sharpcontour.errors import GeometryError
from sharpcontour.geometry import Polygon
from sharpcontour.raster import MaskGrid
from tests.conftest import circle


def _box_mask(size, top, left, side):
    values = np.zeros((size, size))
    values[top:top + side, left:left + side] = 1.0
    return MaskGrid(values)


def _brute_force_band(mask, d):
    h, w = mask.shape
    band = np.zeros_like(mask)
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for dr in range(-d, d + 1):
                for dc in range(-d, d + 1):
                    rr, cc = r + dr, c + dc
                    if not (0 <= rr < h and 0 <= cc < w) or not mask[rr, cc]:
                        band[r, c] = True
    return band


# ── IoU ────────────────────────────────────────────────────────────────

def test_mask_iou_cases():
    a = MaskGrid(np.array([[1.0, 1.0, 0.0]]))
    b = MaskGrid(np.array([[0.0, 1.0, 1.0]]))
    assert metrics.mask_iou(a, a) == 1.0
    assert metrics.mask_iou(a, b) == pytest.approx(1 / 3)
    assert metrics.mask_iou(MaskGrid(np.array([[1.0, 0.0]])), MaskGrid(np.array([[0.0, 1.0]]))) == 0.0
    assert metrics.mask_iou(MaskGrid.zeros(4, 4), MaskGrid.zeros(4, 4)) == 1.0


def test_iou_needs_equal_sizes():
    with pytest.raises(GeometryError):
        metrics.mask_iou(MaskGrid.zeros(4, 4), MaskGrid.zeros(5, 4))


def test_boundary_iou_matches_brute_force():
    a = _box_mask(48, 10, 10, 20)
    b = _box_mask(48, 13, 12, 20)
    expected_a = _brute_force_band(a.binary(), 3)
    expected_b = _brute_force_band(b.binary(), 3)
    expected = np.count_nonzero(expected_a & expected_b) / np.count_nonzero(expected_a | expected_b)
    assert metrics.boundary_iou(a, b, d=3) == pytest.approx(expected)


def test_boundary_iou_is_symmetric_and_bounded():
    a = _box_mask(48, 10, 10, 20)
    b = _box_mask(48, 12, 15, 18)
    assert metrics.boundary_iou(a, b) == pytest.approx(metrics.boundary_iou(b, a))
    assert 0.0 <= metrics.boundary_iou(a, b) <= metrics.mask_iou(a, a)
    assert metrics.boundary_iou(a, a) == 1.0


def test_boundary_band_defaults():
    assert metrics.default_band(100, 100) == 3
    assert metrics.default_band(10, 10) == 1
    with pytest.raises(GeometryError):
        metrics.boundary_iou(MaskGrid.zeros(4, 4), MaskGrid.zeros(4, 4), d=0)


# ── distances ──────────────────────────────────────────────────────────

def test_identical_contours_have_zero_distance():
    ring = circle(30.0, 128)
    stats = metrics.boundary_distance_stats(ring, ring)
    assert stats.mean == 0.0
    assert stats.hausdorff == pytest.approx(0.0, abs=1e-9)


def test_concentric_circles_are_two_pixels_apart():
    stats = metrics.boundary_distance_stats(circle(52.0, 256), circle(50.0, 256))
    assert stats.mean == pytest.approx(2.0, abs=0.05)
    assert stats.median == pytest.approx(2.0, abs=0.05)
    assert stats.hausdorff == pytest.approx(2.0, abs=0.05)


def test_distance_stats_are_translation_invariant():
    pred = geometry.resample(Polygon([[0, 0], [40, 3], [35, 30], [-2, 25]]), 64)
    gt = circle(18.0, 128, center=(18.0, 15.0))
    here = metrics.boundary_distance_stats(pred, gt)
    there = metrics.boundary_distance_stats(pred.translated(13.0, -7.0), gt.translated(13.0, -7.0))
    for name in ('mean', 'median', 'max', 'hausdorff'):
        assert getattr(there, name) == pytest.approx(getattr(here, name), abs=1e-9)


# ── corners ────────────────────────────────────────────────────────────

@pytest.fixture
def star():
    return harness.gen_shape(harness.ShapeSpec('star', scale=100.0, points=5, ratio=0.45))


def test_hull_misses_inner_corners_by_the_apothem_gap(star):
    tips = star.corners[::2]
    inner = star.corners[1::2]
    hull = Polygon([c.as_array() for c in tips])
    stats = metrics.corner_error(hull, inner)
    assert stats.mean == pytest.approx(50.0 * math.cos(math.radians(36)) - 22.5, abs=1e-3)
    assert len(stats.per_corner) == 5
    assert metrics.corner_error(hull, tips).max == pytest.approx(0.0, abs=1e-9)


def test_corner_error_grows_with_smoothing(star):
    tips = star.corners[::2]
    start = geometry.resample(star.outer, 128)
    errors = [metrics.corner_error(Polygon(harness.laplacian_smooth(start.vertices, passes)), tips).mean
              for passes in (1, 3, 5)]
    assert errors[0] < errors[1] < errors[2]


def test_corner_error_needs_corners():
    with pytest.raises(GeometryError):
        metrics.corner_error(circle(5.0, 16), [])


# ── report ─────────────────────────────────────────────────────────────

def test_evaluate_instance_on_a_perfect_prediction(star):
    report = metrics.evaluate_instance(list(star.rings), star, 150, 150, instance='s', config_hash='abc',
                                       runtime_ms=3.0)
    assert report.mask_iou == 1.0
    assert report.boundary_iou == 1.0
    assert report.corner_error_max == pytest.approx(0.0, abs=1e-9)
    assert report.self_intersection_count == 0
    row = report.to_row()
    assert 'runtime_ms' not in row
    assert row['instance'] == 's' and row['config_hash'] == 'abc'
    assert report.to_row(with_runtime=True)['runtime_ms'] == 3.0


def test_evaluate_instance_without_corners_reports_nan():
    report = metrics.evaluate_instance(circle(30.0, 64, center=(40.0, -40.0)),
                                       circle(31.0, 64, center=(40.0, -40.0)), 80, 80)
    assert math.isnan(report.corner_error_mean)
    assert report.mask_iou < 1.0
