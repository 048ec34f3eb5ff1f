"""
Probability fields: read-only maps from a 2D point to an outside-probability.

Three realizations:
- AnalyticOracle: logistic of the signed distance to a known shape (test oracle)
- GridField: bilinear interpolation of a probability raster
- InstanceField: the instance-aware point classifier (IPC), a small MLP whose
  weights are supplied per instance, fed with a bilinear feature lookup and
  box-relative coordinates

Every field evaluates a batch of points at once: `evaluate((k, 2)) -> (k,)`.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.special import expit

from config import settings
from sharpcontour import geometry
from sharpcontour.errors import FieldError
from sharpcontour.geometry import BBox, Point2, ShapeLike
from sharpcontour.raster import MaskGrid, math_to_image

logger = logging.getLogger(__name__)


class ProbabilityField(ABC):
    """phi: point -> probability in [0, 1]; > 0.5 means outside the instance."""

    @abstractmethod
    def evaluate(self, points) -> np.ndarray:
        ...

    def __call__(self, point: Union[Point2, Sequence[float]]) -> float:
        return float(self.evaluate(point)[0])


def _points(points) -> np.ndarray:
    if isinstance(points, Point2):
        return points.as_array()[None, :]
    return np.asarray(points, dtype=float).reshape(-1, 2)


# ── Analytic oracle ────────────────────────────────────────────────────

class AnalyticOracle(ProbabilityField):
    def __init__(self, shape: ShapeLike, tau: float = 0.0):
        if tau < 0:
            raise FieldError(f"sharpness tau must be >= 0, got {tau}")
        self.rings = geometry.as_rings(shape)
        self.tau = float(tau)

    def evaluate(self, points) -> np.ndarray:
        sd = geometry.signed_distances(self.rings, _points(points))
        if self.tau == 0.0:
            return np.where(sd > 0, 1.0, np.where(sd < 0, 0.0, 0.5))
        return expit(sd / self.tau)


def analytic_oracle(shape: ShapeLike, tau: float = 0.0) -> AnalyticOracle:
    """logistic(signed_distance / tau); tau = 0 gives the hard indicator."""
    return AnalyticOracle(shape, tau)


# ── Raster-backed fields ───────────────────────────────────────────────

def _bilinear(channel: np.ndarray, points: np.ndarray) -> np.ndarray:
    # cell (r, c) has its center at math (c + 0.5, -(r + 0.5)); clamp outside
    image = math_to_image(points)
    coords = np.vstack([image[:, 1] - 0.5, image[:, 0] - 0.5])
    return ndimage.map_coordinates(channel, coords, order=1, mode='nearest')


class GridField(ProbabilityField):
    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise FieldError("grid field needs a non-empty 2D raster")
        if np.any(values < 0) or np.any(values > 1) or not np.all(np.isfinite(values)):
            raise FieldError("grid values must lie in [0, 1]")
        self.values = values

    def evaluate(self, points) -> np.ndarray:
        return np.clip(_bilinear(self.values, _points(points)), 0.0, 1.0)


def grid_field(grid: Union[MaskGrid, np.ndarray]) -> GridField:
    values = grid.values if isinstance(grid, MaskGrid) else grid
    return GridField(values)


# ── Instance-aware point classifier ────────────────────────────────────

def ipc_dims(features: int = settings.IPC_DIMS['features'],
             hidden: int = settings.IPC_DIMS['hidden']) -> list[int]:
    """[F + 2, H, H, H, 1]: feature plus relative coordinates in, one logit out."""
    return [features + 2, hidden, hidden, hidden, 1]


@dataclass(frozen=True)
class IpcParams:
    """theta: per-layer weights (out, in) and biases (out,)."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise FieldError("IPC params need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise FieldError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise FieldError(f"layer {i} expects {w.shape[1]} inputs, "
                                 f"previous layer gives {self.weights[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise FieldError(f"layer {i} has non-finite parameters")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    @classmethod
    def from_flat(cls, vector: np.ndarray, dims: Sequence[int]) -> IpcParams:
        vector = np.asarray(vector, dtype=float)
        expected = param_count(dims)
        if vector.shape != (expected,):
            raise FieldError(f"flat parameter vector has {vector.size} entries, dims {list(dims)} need {expected}")
        weights, biases, at = [], [], 0
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            weights.append(vector[at:at + n_in * n_out].reshape(n_out, n_in).copy())
            at += n_in * n_out
            biases.append(vector[at:at + n_out].copy())
            at += n_out
        return cls(tuple(weights), tuple(biases))

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> IpcParams:
        return cls.from_flat(np.zeros(param_count(dims)), dims)

    def to_dict(self) -> dict:
        return {
            'dims': self.dims,
            'layers': [{'w': w.tolist(), 'b': b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> IpcParams:
        try:
            layers = data['layers']
            params = cls(tuple(np.array(layer['w'], dtype=float) for layer in layers),
                         tuple(np.array(layer['b'], dtype=float) for layer in layers))
        except (KeyError, TypeError, ValueError) as exc:
            raise FieldError(f"malformed IPC params: {exc}") from exc
        if 'dims' in data and list(data['dims']) != params.dims:
            raise FieldError(f"declared dims {data['dims']} disagree with layer shapes {params.dims}")
        return params


def param_count(dims: Sequence[int]) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in zip(dims[:-1], dims[1:]))


def mlp_forward(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], inputs: np.ndarray,
                return_cache: bool = False):
    """
    ReLU MLP returning raw outputs (logits), shape (k, out).

    With return_cache, also returns the list of layer inputs and the list of
    hidden pre-activations needed for backpropagation.
    """
    h = inputs
    layer_inputs, pre_activations = [], []
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        layer_inputs.append(h)
        z = h @ w.T + b
        if i < last:
            pre_activations.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    if return_cache:
        return h, layer_inputs, pre_activations
    return h


def _check_inputs(params: IpcParams, features: np.ndarray, coords: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=float))
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if features.shape[0] != coords.shape[0] or coords.shape[1] != 2:
        raise FieldError(f"features {features.shape} and coordinates {coords.shape} do not pair up")
    if features.shape[1] + 2 != params.dims[0]:
        raise FieldError(f"dimension mismatch: params take {params.dims[0] - 2} features, got {features.shape[1]}")
    return np.hstack([features, coords])


def ipc_forward_batch(params: IpcParams, features: np.ndarray, coords: np.ndarray) -> np.ndarray:
    inputs = _check_inputs(params, features, coords)
    logits = mlp_forward(params.weights, params.biases, inputs)
    return expit(logits[:, 0])


def ipc_forward(params: IpcParams, feature: Sequence[float], c: Sequence[float]) -> float:
    """phi(f_i^c) for a single point; > 0.5 classifies the point as outside."""
    feature = np.asarray(feature, dtype=float)
    c = np.asarray(c, dtype=float)
    if feature.ndim != 1 or c.shape != (2,):
        raise FieldError("ipc_forward takes one feature vector and one coordinate pair")
    return float(ipc_forward_batch(params, feature[None, :], c[None, :])[0])


def lipschitz_bound(params: IpcParams) -> float:
    """Upper bound on |d phi / d input|: product of spectral norms times sigmoid's 1/4."""
    bound = 0.25
    for w in params.weights:
        bound *= float(np.linalg.norm(w, ord=2))
    return bound


# ── Feature grids ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class FeatureGrid:
    """Per-cell feature vectors, shape (height, width, channels), row 0 at the top."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.size == 0:
            raise FieldError(f"feature grid must be (height, width, channels), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise FieldError("feature grid has non-finite entries")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def extent(self) -> BBox:
        return BBox(Point2(0.0, -float(self.height)), Point2(float(self.width), 0.0))

    def sample(self, points) -> np.ndarray:
        """Bilinear feature lookup at cell centers, clamped outside the grid; (k, F)."""
        pts = _points(points)
        return np.column_stack([_bilinear(self.data[:, :, ch], pts) for ch in range(self.channels)])

    def pooled_embedding(self, box: BBox) -> np.ndarray:
        """Mean and std of the feature vectors whose cell centers lie in the box, (2F,)."""
        rows = np.arange(self.height)
        cols = np.arange(self.width)
        cx = cols + 0.5
        cy = -(rows + 0.5)
        col_in = (cx >= box.min.x) & (cx <= box.max.x)
        row_in = (cy >= box.min.y) & (cy <= box.max.y)
        cells = self.data[np.ix_(row_in, col_in)].reshape(-1, self.channels)
        if len(cells) == 0:
            cells = self.sample([[0.5 * (box.min.x + box.max.x), 0.5 * (box.min.y + box.max.y)]])
        return np.concatenate([cells.mean(axis=0), cells.std(axis=0)])


@dataclass(frozen=True)
class InstanceContext:
    box: BBox
    params: IpcParams

    def __post_init__(self):
        if self.box.area <= 0:
            raise FieldError("instance box must have positive area")


def relative_coords(points, box: BBox) -> np.ndarray:
    """Map box corners to (0, 0)-(1, 1); points outside the box are not clipped."""
    pts = _points(points)
    return np.column_stack([(pts[:, 0] - box.min.x) / box.width,
                            (pts[:, 1] - box.min.y) / box.height])


class InstanceField(ProbabilityField):
    def __init__(self, grid: FeatureGrid, ctx: InstanceContext):
        if grid.channels + 2 != ctx.params.dims[0]:
            raise FieldError(f"params expect {ctx.params.dims[0] - 2} feature channels, grid has {grid.channels}")
        extent = grid.extent()
        if (ctx.box.max.x < extent.min.x or ctx.box.min.x > extent.max.x
                or ctx.box.max.y < extent.min.y or ctx.box.min.y > extent.max.y):
            raise FieldError("instance box does not overlap the feature grid")
        self.grid = grid
        self.ctx = ctx

    def evaluate(self, points) -> np.ndarray:
        pts = _points(points)
        return ipc_forward_batch(self.ctx.params, self.grid.sample(pts), relative_coords(pts, self.ctx.box))


def instance_field(grid: FeatureGrid, ctx: InstanceContext) -> InstanceField:
    return InstanceField(grid, ctx)


def synthetic_feature_grid(labels: Union[np.ndarray, MaskGrid],
                           channels: int = settings.IPC_DIMS['features'],
                           seed: int = 0,
                           sigmas: tuple[float, float] = settings.FEATURE_BLUR_SIGMAS) -> FeatureGrid:
    """
    Stand-in for backbone features, computed from an instance label raster.

    Channel layout: fine blur and coarse blur of the foreground, |d/dx| and
    |d/dy| of the fine blur, x, y and diagonal pixel coordinates, a blurred
    per-instance appearance intensity, then seeded noise.
    """
    if isinstance(labels, MaskGrid):
        labels = (labels.values > 0.5).astype(int)
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.size == 0:
        raise FieldError("label raster must be a non-empty 2D array")
    if channels < 8:
        raise FieldError(f"synthetic feature grids need at least 8 channels, got {channels}")

    rng = np.random.default_rng(seed)
    height, width = labels.shape
    foreground = (labels > 0).astype(float)
    fine = ndimage.gaussian_filter(foreground, sigmas[0])
    coarse = ndimage.gaussian_filter(foreground, sigmas[1])
    grad_x = np.abs(ndimage.sobel(fine, axis=1)) / 8.0
    grad_y = np.abs(ndimage.sobel(fine, axis=0)) / 8.0

    rows, cols = np.mgrid[0:height, 0:width]
    x_coord = (cols + 0.5) / width
    y_coord = (rows + 0.5) / height
    diagonal = (cols + rows + 1.0) / (width + height)

    instance_ids = np.unique(labels[labels > 0])
    intensities = rng.permutation(np.linspace(0.35, 1.0, max(len(instance_ids), 1)))
    albedo = np.zeros_like(foreground)
    for instance_id, intensity in zip(instance_ids, intensities):
        albedo[labels == instance_id] = intensity
    appearance = ndimage.gaussian_filter(albedo, sigmas[0])

    noise = rng.normal(0.0, 0.1, size=(height, width, channels - 8))
    data = np.dstack([fine, coarse, grad_x, grad_y, x_coord, y_coord, diagonal, appearance, noise])
    logger.debug("Synthetic feature grid %dx%d with %d channels (%d instances)",
                 width, height, channels, len(instance_ids))
    return FeatureGrid(data)
