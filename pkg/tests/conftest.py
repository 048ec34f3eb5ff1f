"""Shared fixtures: small polygons, oracles and on-disk documents."""

import json

import numpy as np
import pytest

from sharpcontour.geometry import Polygon, regular_polygon


def square(x0: float, y0: float, side: float) -> Polygon:
    """CCW axis-aligned square with its lower-left corner at (x0, y0)."""
    return Polygon([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]])


def circle(radius: float, n: int = 360, center=(0.0, 0.0)) -> Polygon:
    return regular_polygon(center, radius, n)


def write_document(path, contours, instance_id='0'):
    """PolygonDocument JSON in image coordinates, one instance."""
    path.write_text(json.dumps({
        'coordinate_convention': 'image',
        'instances': [{'id': instance_id, 'contours': contours}],
    }))
    return path


@pytest.fixture
def unit_square():
    return square(0.0, 0.0, 1.0)


@pytest.fixture
def oracle_circle():
    return circle(50.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
