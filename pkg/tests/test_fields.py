import numpy as np
import pytest
from scipy.special import expit

from sharpcontour import fields
from sharpcontour.errors import FieldError
from sharpcontour.fields import FeatureGrid, InstanceContext, IpcParams
from sharpcontour.geometry import BBox, Point2
from sharpcontour.raster import cell_center
from tests.conftest import square


# ── analytic oracle ────────────────────────────────────────────────────

def test_hard_oracle_is_an_indicator(oracle_circle):
    phi = fields.analytic_oracle(oracle_circle, tau=0.0)
    assert phi((60.0, 0.0)) == 1.0
    assert phi((0.0, 0.0)) == 0.0
    assert phi((50.0, 0.0)) == 0.5


def test_soft_oracle_is_logistic_of_distance(oracle_circle):
    phi = fields.analytic_oracle(oracle_circle, tau=2.0)
    assert phi((60.0, 0.0)) == pytest.approx(expit(5.0), abs=1e-9)
    assert phi((60.0, 0.0)) == pytest.approx(0.9933, abs=1e-4)
    assert phi(oracle_circle.vertices[17]) == 0.5


def test_oracle_rejects_negative_tau(oracle_circle):
    with pytest.raises(FieldError):
        fields.analytic_oracle(oracle_circle, tau=-1.0)


def test_oracle_mirror_symmetry(rng):
    phi = fields.analytic_oracle(square(-10.0, -10.0, 20.0), tau=1.5)
    points = rng.uniform(-20, 20, size=(200, 2))
    mirrored = points * np.array([-1.0, 1.0])
    np.testing.assert_allclose(phi.evaluate(points), phi.evaluate(mirrored), atol=1e-12)


def test_oracle_increases_along_outward_rays(oracle_circle):
    phi = fields.analytic_oracle(oracle_circle, tau=3.0)
    ray = np.column_stack([np.linspace(0.0, 90.0, 50), np.zeros(50)])
    assert np.all(np.diff(phi.evaluate(ray)) > 0)


# ── grid field ─────────────────────────────────────────────────────────

def test_grid_field_examples():
    phi = fields.grid_field(np.array([[0.0, 1.0], [0.0, 1.0]]))
    assert phi(cell_center(0, 0).as_array()) == 0.0
    assert phi((1.0, -0.5)) == pytest.approx(0.5)


def test_grid_field_returns_cell_values_at_centers(rng):
    values = rng.uniform(size=(5, 7))
    phi = fields.grid_field(values)
    centers = np.array([cell_center(r, c).as_array() for r in range(5) for c in range(7)])
    np.testing.assert_allclose(phi.evaluate(centers), values.ravel(), atol=1e-12)


def _textbook_bilinear(values, x, y_math):
    u = x - 0.5
    v = -y_math - 0.5
    c0 = int(np.floor(u))
    r0 = int(np.floor(v))
    fu, fv = u - c0, v - r0
    return ((1 - fu) * (1 - fv) * values[r0, c0] + fu * (1 - fv) * values[r0, c0 + 1]
            + (1 - fu) * fv * values[r0 + 1, c0] + fu * fv * values[r0 + 1, c0 + 1])


def test_grid_field_matches_textbook_bilinear(rng):
    values = rng.uniform(size=(16, 16))
    phi = fields.grid_field(values)
    points = np.column_stack([rng.uniform(0.5, 15.5, 100), -rng.uniform(0.5, 15.5, 100)])
    expected = [_textbook_bilinear(values, x, y) for x, y in points]
    np.testing.assert_allclose(phi.evaluate(points), expected, atol=1e-9)


def test_grid_field_clamps_outside():
    values = np.array([[0.2, 0.4], [0.6, 0.8]])
    phi = fields.grid_field(values)
    assert phi((-5.0, 5.0)) == pytest.approx(0.2)
    assert phi((50.0, -50.0)) == pytest.approx(0.8)


def test_grid_field_validation():
    with pytest.raises(FieldError):
        fields.grid_field(np.zeros((0, 3)))
    with pytest.raises(FieldError):
        fields.grid_field(np.array([[1.5]]))


# ── IPC ────────────────────────────────────────────────────────────────

def test_default_ipc_size():
    assert fields.ipc_dims() == [18, 16, 16, 16, 1]
    assert fields.param_count(fields.ipc_dims()) == 865
    assert IpcParams.zeros(fields.ipc_dims()).size == 865


def test_zero_params_give_half():
    params = IpcParams.zeros(fields.ipc_dims())
    assert fields.ipc_forward(params, np.ones(16), [0.3, 0.7]) == 0.5


def test_hand_built_network():
    params = IpcParams(
        weights=(np.array([[1.0, 0, 0], [-1.0, 0, 0]]), np.array([[2.0, 0], [0, 0]]),
                 np.array([[0.5, 0], [0, 0]]), np.array([[0.3, 0]])),
        biases=(np.zeros(2), np.zeros(2), np.zeros(2), np.array([-0.1])),
    )
    assert params.dims == [3, 2, 2, 2, 1]
    assert fields.ipc_forward(params, [1.0], [0.0, 0.0]) == pytest.approx(expit(0.2), abs=1e-12)


def test_flat_layout_is_row_major_per_layer():
    dims = fields.ipc_dims()
    params = IpcParams.from_flat(np.arange(865, dtype=float), dims)
    assert params.weights[0][0, 1] == 1.0
    assert params.weights[0][1, 0] == 18.0
    assert params.biases[0][0] == 288.0
    np.testing.assert_array_equal(params.flatten(), np.arange(865))


def test_params_validation():
    with pytest.raises(FieldError, match='entries'):
        IpcParams.from_flat(np.zeros(10), fields.ipc_dims())
    with pytest.raises(FieldError, match='non-finite'):
        IpcParams((np.array([[np.inf]]),), (np.zeros(1),))
    data = IpcParams.zeros([3, 2, 1]).to_dict()
    data['dims'] = [3, 4, 1]
    with pytest.raises(FieldError, match='disagree'):
        IpcParams.from_dict(data)


def test_ipc_dimension_mismatch():
    params = IpcParams.zeros(fields.ipc_dims())
    with pytest.raises(FieldError, match='dimension mismatch'):
        fields.ipc_forward(params, np.ones(15), [0.0, 0.0])


def test_lipschitz_bound_holds(rng):
    dims = fields.ipc_dims()
    params = IpcParams.from_flat(rng.normal(0.0, 0.5, fields.param_count(dims)), dims)
    bound = fields.lipschitz_bound(params)
    a = rng.normal(size=(200, 18))
    b = a + rng.normal(0.0, 0.1, size=a.shape)
    gap = np.abs(fields.ipc_forward_batch(params, a[:, :16], a[:, 16:])
                 - fields.ipc_forward_batch(params, b[:, :16], b[:, 16:]))
    assert np.all(gap <= bound * np.linalg.norm(a - b, axis=1) + 1e-12)


# ── feature grids and instance fields ──────────────────────────────────

def test_instance_field_with_zero_params(rng):
    grid = FeatureGrid(rng.normal(size=(20, 30, 16)))
    ctx = InstanceContext(BBox(Point2(5.0, -15.0), Point2(25.0, -5.0)), IpcParams.zeros(fields.ipc_dims()))
    phi = fields.instance_field(grid, ctx)
    np.testing.assert_array_equal(phi.evaluate(rng.uniform(0, 20, size=(10, 2)) * [1, -1]), 0.5)


def test_instance_field_is_translation_equivariant(rng):
    dims = fields.ipc_dims()
    params = IpcParams.from_flat(rng.normal(0.0, 0.3, fields.param_count(dims)), dims)
    data = rng.normal(size=(24, 24, 16))
    padded = np.pad(data, ((5, 0), (10, 0), (0, 0)), mode='constant', constant_values=7.0)
    box = BBox(Point2(4.0, -20.0), Point2(20.0, -4.0))

    here = fields.instance_field(FeatureGrid(data), InstanceContext(box, params))
    there = fields.instance_field(FeatureGrid(padded), InstanceContext(box.translated(10.0, -5.0), params))
    points = np.column_stack([rng.uniform(2, 22, 50), -rng.uniform(2, 22, 50)])
    np.testing.assert_allclose(here.evaluate(points), there.evaluate(points + [10.0, -5.0]), atol=1e-12)


def test_instance_field_errors(rng):
    grid = FeatureGrid(rng.normal(size=(10, 10, 8)))
    box = BBox(Point2(1.0, -9.0), Point2(9.0, -1.0))
    with pytest.raises(FieldError, match='channels'):
        fields.instance_field(grid, InstanceContext(box, IpcParams.zeros(fields.ipc_dims())))
    with pytest.raises(FieldError, match='overlap'):
        far = BBox(Point2(100.0, -9.0), Point2(110.0, -1.0))
        fields.instance_field(grid, InstanceContext(far, IpcParams.zeros(fields.ipc_dims(features=8))))
    with pytest.raises(FieldError):
        InstanceContext(BBox(Point2(0.0, 0.0), Point2(0.0, 5.0)), IpcParams.zeros(fields.ipc_dims()))


def test_relative_coords_map_box_corners():
    box = BBox(Point2(10.0, -30.0), Point2(20.0, -10.0))
    np.testing.assert_allclose(fields.relative_coords([[10.0, -30.0], [20.0, -10.0], [25.0, -10.0]], box),
                               [[0.0, 0.0], [1.0, 1.0], [1.5, 1.0]])


def test_synthetic_feature_grid():
    labels = np.zeros((32, 40), dtype=int)
    labels[8:20, 10:30] = 1
    grid = fields.synthetic_feature_grid(labels, seed=3)
    assert (grid.height, grid.width, grid.channels) == (32, 40, 16)
    np.testing.assert_array_equal(grid.data, fields.synthetic_feature_grid(labels, seed=3).data)
    assert grid.pooled_embedding(BBox(Point2(10.0, -20.0), Point2(30.0, -8.0))).shape == (32,)
    with pytest.raises(FieldError):
        fields.synthetic_feature_grid(labels, channels=4)


def test_feature_grid_validation():
    with pytest.raises(FieldError):
        FeatureGrid(np.zeros((4, 4)))
    with pytest.raises(FieldError):
        FeatureGrid(np.full((2, 2, 3), np.nan))


def test_every_field_stays_in_the_unit_interval(rng, oracle_circle):
    points = rng.uniform(-200.0, 200.0, size=(10_000, 2))
    dims = fields.ipc_dims()
    params = IpcParams.from_flat(rng.normal(0.0, 3.0, fields.param_count(dims)), dims)
    box = BBox(Point2(5.0, -35.0), Point2(35.0, -5.0))
    realizations = [
        fields.analytic_oracle(oracle_circle, tau=0.0),
        fields.analytic_oracle(oracle_circle, tau=2.0),
        fields.grid_field(rng.uniform(size=(40, 40))),
        fields.instance_field(FeatureGrid(rng.normal(size=(40, 40, 16))), InstanceContext(box, params)),
    ]
    for phi in realizations:
        values = phi.evaluate(points)
        assert values.shape == (10_000,)
        assert np.all((values >= 0.0) & (values <= 1.0))
