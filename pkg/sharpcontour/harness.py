"""
Benchmark harness: synthetic corpus, coarse-contour perturbation, regression
baselines, and the parameter-sweep runner.

Every cell of a sweep is reproducible from (corpus seed, config): shapes,
perturbations and feature grids are all derived from explicit seeds, and
report rows come back in (config, shape) order however many workers run.
"""

from __future__ import annotations

import functools
import itertools
import json
import logging
import math
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from shapely import geometry as shp

from config import settings
from sharpcontour import geometry
from sharpcontour.errors import ConfigError, HarnessError, SharpContourError
from sharpcontour.evolution import EvolutionConfig, EvolutionTrace, refine_shape
from sharpcontour.fields import (
    FeatureGrid,
    InstanceContext,
    IpcParams,
    ProbabilityField,
    analytic_oracle,
    instance_field,
    ipc_forward_batch,
    mlp_forward,
    relative_coords,
    synthetic_feature_grid,
)
from sharpcontour.geometry import BBox, Point2, Polygon, Shape, ShapeLike
from sharpcontour.ipc_training import (
    SampleSet,
    TrainConfig,
    band_accuracy,
    descend,
    fit_instance,
    hypernet_forward,
    init_hypernetwork,
    init_params,
    instance_embedding,
    mlp_backward,
    sample_boundary_points,
    split_samples,
    train_hypernetwork,
    train_instance,
)
from sharpcontour.metrics import MetricsReport, evaluate_instance
from sharpcontour.raster import rasterize

logger = logging.getLogger(__name__)

_C = settings.CORPUS


# ── Shapes ─────────────────────────────────────────────────────────────

class ShapeKind(str, Enum):
    STAR = 'star'
    BLOB = 'blob'
    ROUNDED_RECT = 'rounded_rect'
    ANNULUS = 'annulus'


@dataclass(frozen=True)
class ShapeSpec:
    """
    One synthetic ground-truth shape.

    `scale` is the outer diameter in px. The shape is centred on its own
    canvas (side = scale * (1 + 2 * canvas_margin)) and rotated by `rotation`.
    """

    kind: ShapeKind
    scale: float = 100.0
    rotation: float = 0.0
    seed: int = 0
    points: int = 5                 # star
    ratio: float = 0.45             # star inner / outer radius
    harmonics: Optional[tuple[float, ...]] = None   # blob amplitudes for h = 2, 3, ...
    aspect: float = 1.5             # rounded_rect width / height
    corner_radius: float = 0.15     # rounded_rect, fraction of the short side
    inner_ratio: float = 0.5        # annulus hole radius / outer radius
    vertices: int = 256             # sampling density of smooth outlines

    def __post_init__(self):
        object.__setattr__(self, 'kind', ShapeKind(self.kind))
        if not self.scale > 0:
            raise ConfigError("shape scale must be > 0")
        if self.points < 3 or not 0 < self.ratio < 1:
            raise ConfigError("star needs >= 3 points and 0 < ratio < 1")
        if not self.aspect >= 1 or not 0 <= self.corner_radius < 0.5:
            raise ConfigError("rounded_rect needs aspect >= 1 and corner_radius in [0, 0.5)")
        if not 0 < self.inner_ratio < 1:
            raise ConfigError("annulus inner_ratio must lie in (0, 1)")
        if self.harmonics is not None and any(a < 0 for a in self.harmonics):
            raise ConfigError("blob harmonic amplitudes must be >= 0")
        if self.vertices < _C['min_vertices']:
            raise ConfigError(f"shapes are sampled with >= {_C['min_vertices']} vertices")

    @property
    def canvas(self) -> int:
        return int(math.ceil(self.scale * (1.0 + 2.0 * _C['canvas_margin'])))

    @property
    def center(self) -> tuple[float, float]:
        # image centre, in math coordinates (y up)
        return 0.5 * self.canvas, -0.5 * self.canvas

    def reseeded(self, seed: int) -> ShapeSpec:
        return ShapeSpec(**{f.name: getattr(self, f.name) for f in fields(self)} | {'seed': seed})


def _densify(vertices: np.ndarray, min_vertices: int) -> np.ndarray:
    """Split every edge evenly until there are >= min_vertices points; original vertices are kept."""
    per_edge = max(1, math.ceil(min_vertices / len(vertices)))
    if per_edge == 1:
        return vertices
    t = np.arange(per_edge)[None, :, None] / per_edge
    nxt = np.roll(vertices, -1, axis=0)
    return (vertices[:, None, :] + t * (nxt - vertices)[:, None, :]).reshape(-1, 2)


def _place(vertices: np.ndarray, spec: ShapeSpec) -> np.ndarray:
    c, s = math.cos(spec.rotation), math.sin(spec.rotation)
    rotated = vertices @ np.array([[c, s], [-s, c]])
    return rotated + np.array(spec.center)


def _circle(radius: float, n: int) -> np.ndarray:
    return geometry.regular_polygon((0.0, 0.0), radius, n).vertices


def _from_shapely(polygon) -> list[Polygon]:
    if isinstance(polygon, shp.MultiPolygon):
        polygon = max(polygon.geoms, key=lambda g: g.area)
    rings = [Polygon.from_points(np.asarray(polygon.exterior.coords)[:-1])]
    rings += [Polygon.from_points(np.asarray(r.coords)[:-1]) for r in polygon.interiors]
    return rings


def _build(spec: ShapeSpec) -> Shape:
    radius = 0.5 * spec.scale
    min_vertices = _C['min_vertices']
    if spec.kind is ShapeKind.STAR:
        angles = np.pi / 2 + np.pi * np.arange(2 * spec.points) / spec.points
        radii = np.where(np.arange(2 * spec.points) % 2 == 0, radius, spec.ratio * radius)
        corners = _place(np.column_stack([radii * np.cos(angles), radii * np.sin(angles)]), spec)
        outline = _densify(corners, min_vertices)
        return Shape.from_rings([Polygon(outline)], corners=[Point2(*c) for c in corners])

    if spec.kind is ShapeKind.BLOB:
        rng = np.random.default_rng(spec.seed)
        amplitudes = (spec.harmonics if spec.harmonics is not None
                      else tuple(rng.uniform(0.0, 0.25) / (h - 1) for h in range(2, 6)))
        phases = rng.uniform(0.0, 2 * np.pi, size=len(amplitudes))
        t = 2 * np.pi * np.arange(spec.vertices) / spec.vertices
        r = np.ones_like(t)
        for h, (a, phase) in enumerate(zip(amplitudes, phases), start=2):
            r += a * np.cos(h * t + phase)
        # normalise so the widest point reaches the nominal radius
        r = radius * r / r.max()
        return Shape.from_rings([Polygon(_place(np.column_stack([r * np.cos(t), r * np.sin(t)]), spec))])

    if spec.kind is ShapeKind.ROUNDED_RECT:
        half_w = radius
        half_h = radius / spec.aspect
        corner = spec.corner_radius * 2 * half_h
        core = shp.box(-half_w + corner, -half_h + corner, half_w - corner, half_h - corner)
        outline = core.buffer(corner, 16) if corner > 0 else shp.box(-half_w, -half_h, half_w, half_h)
        (ring,) = _from_shapely(outline)
        return Shape.from_rings([Polygon(_place(_densify(ring.vertices, min_vertices), spec))])

    outer = _place(_circle(radius, spec.vertices), spec)
    inner = _place(_circle(spec.inner_ratio * radius, spec.vertices // 2), spec)
    return Shape.from_rings([Polygon(outer), Polygon(inner)])


def gen_shape(spec: ShapeSpec) -> Shape:
    """Build the shape, reseeding up to CORPUS['max_reseeds'] times until every ring is simple."""
    current = spec
    for attempt in range(_C['max_reseeds'] + 1):
        shape = _build(current)
        if all(geometry.self_intersection_count(r) == 0 for r in shape.rings):
            return shape
        logger.warning("Shape %s (seed %d) self-intersects, reseeding", spec.kind.value, current.seed)
        current = current.reseeded(current.seed + 1)
    raise HarnessError(f"{spec.kind.value} shape still self-intersects after {_C['max_reseeds']} reseeds",
                       shape=f"{spec.kind.value}:{spec.seed}")


# ── Perturbation ───────────────────────────────────────────────────────

# Seed offset between redraws of a perturbed ring
_REDRAW_SEED_STRIDE = 7919


class PerturbMode(str, Enum):
    VERTEX_JITTER = 'vertex_jitter'
    LAPLACIAN_SMOOTH = 'laplacian_smooth'
    UNIFORM_OFFSET = 'uniform_offset'
    RADIAL_SCALE = 'radial_scale'


@dataclass(frozen=True)
class PerturbSpec:
    """
    amount = sigma as a fraction of sqrt(A) (jitter), passes (smoothing), px along the normal
    (offset), or relative growth about the ring centroid (radial scale).
    """

    mode: PerturbMode
    amount: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'mode', PerturbMode(self.mode))
        if self.mode is PerturbMode.VERTEX_JITTER and self.amount < 0:
            raise ConfigError("jitter sigma must be >= 0")
        if self.mode is PerturbMode.LAPLACIAN_SMOOTH and (self.amount < 0 or self.amount != int(self.amount)):
            raise ConfigError("smoothing passes must be a non-negative integer")
        if self.mode is PerturbMode.RADIAL_SCALE and not self.amount > -1:
            raise ConfigError("radial scale must be > -1")

    @classmethod
    def from_dict(cls, data: dict) -> PerturbSpec:
        return cls(mode=data['mode'], amount=float(data.get('amount', 0.0)), seed=int(data.get('seed', 0)))


def laplacian_smooth(vertices: np.ndarray, passes: int, weight: float = settings.LAPLACIAN_WEIGHT) -> np.ndarray:
    v = np.array(vertices, dtype=float)
    for _ in range(passes):
        average = 0.5 * (np.roll(v, 1, axis=0) + np.roll(v, -1, axis=0))
        v = (1.0 - weight) * v + weight * average
    return v


def perturb(p: Polygon, spec: PerturbSpec) -> Polygon:
    """Coarsen a contour; the vertex count never changes."""
    if spec.amount == 0:
        return p
    if spec.mode is PerturbMode.VERTEX_JITTER:
        rng = np.random.default_rng(spec.seed)
        sigma = spec.amount * math.sqrt(geometry.bbox(p).area)
        return Polygon(p.vertices + rng.normal(0.0, sigma, size=p.vertices.shape))
    if spec.mode is PerturbMode.LAPLACIAN_SMOOTH:
        return Polygon(laplacian_smooth(p.vertices, int(spec.amount)))
    if spec.mode is PerturbMode.RADIAL_SCALE:
        center = p.centroid().as_array()
        return Polygon(center + (1.0 + spec.amount) * (p.vertices - center))
    return Polygon(p.vertices + spec.amount * geometry.vertex_normals(p))


def _perturb_ring(ring: Polygon, specs: Sequence[PerturbSpec], seed: int) -> Polygon:
    for k, spec in enumerate(specs):
        ring = perturb(ring, PerturbSpec(spec.mode, spec.amount, seed + spec.seed + k))
    return ring


def initial_contour(gt: ShapeLike, specs: Sequence[PerturbSpec], n: int = settings.EVOLUTION_DEFAULTS['resolution'],
                    seed: int = 0) -> list[Polygon]:
    """
    Simulated coarse segmentation output: every ring resampled to n vertices, then perturbed in order.

    A segmentation outline never crosses itself, so a jittered ring that does
    is drawn again with the next seed, up to CORPUS['max_reseeds'] times.
    """
    jittered = any(s.mode is PerturbMode.VERTEX_JITTER and s.amount > 0 for s in specs)
    rings = []
    for r, ring in enumerate(geometry.as_rings(gt)):
        base = geometry.resample(ring, n)
        for attempt in range(_C['max_reseeds'] + 1):
            contour = _perturb_ring(base, specs, seed + 1000 * r + _REDRAW_SEED_STRIDE * attempt)
            if not jittered or geometry.self_intersection_count(contour) == 0:
                break
            logger.debug("Perturbed ring %d (seed %d) self-intersects, redrawing", r, seed)
        else:
            raise HarnessError(f"perturbed ring {r} still self-intersects after {_C['max_reseeds']} redraws",
                               shape=f"seed {seed}")
        rings.append(contour)
    return rings


def acceptance_perturbation() -> list[PerturbSpec]:
    return [PerturbSpec.from_dict(d) for d in settings.ACCEPTANCE_PERTURBATION]


def tolerance_perturbation() -> list[PerturbSpec]:
    return [PerturbSpec.from_dict(d) for d in settings.TOLERANCE_PERTURBATION]


# ── Corpora ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CorpusItem:
    name: str
    spec: ShapeSpec
    gt: Shape

    @property
    def kind(self) -> ShapeKind:
        return self.spec.kind

    @property
    def width(self) -> int:
        return self.spec.canvas

    @property
    def height(self) -> int:
        return self.spec.canvas


def _random_spec(kind: ShapeKind, rng: np.random.Generator) -> ShapeSpec:
    common = dict(
        scale=float(rng.uniform(*_C['scale_range'])),
        rotation=float(rng.uniform(0.0, 2 * np.pi)),
        seed=int(rng.integers(2**31 - 1)),
    )
    if kind is ShapeKind.STAR:
        return ShapeSpec(kind, points=int(rng.integers(4, 9)), ratio=float(rng.uniform(0.35, 0.6)), **common)
    if kind is ShapeKind.ROUNDED_RECT:
        return ShapeSpec(kind, aspect=float(rng.uniform(1.0, 2.0)),
                         corner_radius=float(rng.uniform(0.05, 0.25)), **common)
    if kind is ShapeKind.ANNULUS:
        return ShapeSpec(kind, inner_ratio=float(rng.uniform(0.3, 0.6)), **common)
    return ShapeSpec(kind, **common)


def standard_corpus(seed: int = _C['master_seed'], counts: Optional[dict] = None) -> list[CorpusItem]:
    """20 blobs, 15 stars, 10 rounded rects and 5 annuli by default, all from one master seed."""
    counts = counts or _C['counts']
    rng = np.random.default_rng(seed)
    items = []
    for kind_name, count in counts.items():
        kind = ShapeKind(kind_name)
        for i in range(count):
            spec = _random_spec(kind, rng)
            items.append(CorpusItem(f"{kind.value}_{i:02d}", spec, gen_shape(spec)))
    logger.info("Generated corpus of %d shapes (seed %d)", len(items), seed)
    return items


def star_corpus(seed: int = _C['master_seed']) -> list[CorpusItem]:
    return [item for item in standard_corpus(seed) if item.kind is ShapeKind.STAR]


def small_corpus(seed: int = _C['master_seed']) -> list[CorpusItem]:
    """Two shapes of each kind, for quick runs."""
    return standard_corpus(seed, {kind: 2 for kind in _C['counts']})


SUITES: dict[str, Callable[[int], list[CorpusItem]]] = {
    'standard': standard_corpus,
    'stars': star_corpus,
    'small': small_corpus,
}


def load_suite(name: str, seed: int = _C['master_seed']) -> list[CorpusItem]:
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}, expected one of {sorted(SUITES)}")
    return SUITES[name](seed)


# ── Occlusion scene ────────────────────────────────────────────────────

@dataclass(frozen=True)
class SceneInstance:
    instance_id: int
    gt: Shape
    box: BBox


@dataclass(frozen=True)
class OverlapScene:
    width: int
    height: int
    labels: np.ndarray
    grid: FeatureGrid
    instances: tuple[SceneInstance, ...]
    overlap: Polygon

    def instance(self, instance_id: int) -> SceneInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise HarnessError(f"scene has no instance {instance_id}")


def overlap_scene(seed: int = 0, size: int = 160, scale: float = 90.0) -> OverlapScene:
    """
    Two overlapping blobs; instance 1 is in front and owns the shared region.

    Instance 2's ground truth is its visible part. `overlap` is the region
    covered by both full blobs, where the two instances must disagree.
    """
    rng = np.random.default_rng(seed)
    front_spec = ShapeSpec(ShapeKind.BLOB, scale=scale, seed=int(rng.integers(2**31 - 1)))
    back_spec = ShapeSpec(ShapeKind.BLOB, scale=scale, seed=int(rng.integers(2**31 - 1)))
    shift = 0.2 * scale
    front = gen_shape(front_spec).translated(0.5 * size - front_spec.center[0] - shift,
                                             -0.5 * size - front_spec.center[1])
    back = gen_shape(back_spec).translated(0.5 * size - back_spec.center[0] + shift,
                                           -0.5 * size - back_spec.center[1])

    front_poly = shp.Polygon(front.outer.vertices)
    back_poly = shp.Polygon(back.outer.vertices)
    visible_back = Shape.from_rings(_from_shapely(back_poly.difference(front_poly)))
    shared = back_poly.intersection(front_poly)
    if shared.is_empty:
        raise HarnessError(f"blobs of scene {seed} do not overlap")
    overlap = _from_shapely(shared)[0]

    labels = np.zeros((size, size), dtype=int)
    labels[rasterize(back, size, size).binary()] = 2
    labels[rasterize(front, size, size).binary()] = 1
    grid = synthetic_feature_grid(labels, seed=seed)
    instances = (
        SceneInstance(1, front, geometry.bbox(front)),
        SceneInstance(2, visible_back, geometry.bbox(visible_back)),
    )
    return OverlapScene(size, size, labels, grid, instances, overlap)


def feature_grid_for(item: CorpusItem, seed: int = 0) -> FeatureGrid:
    labels = rasterize(item.gt, item.width, item.height).binary().astype(int)
    return synthetic_feature_grid(labels, seed=seed)


# ── Regression baselines ───────────────────────────────────────────────

class RegressionVariant(str, Enum):
    REG1 = 'reg1'   # offset vector
    REG2 = 'reg2'   # signed distance along the normal

    @property
    def outputs(self) -> int:
        return 2 if self is RegressionVariant.REG1 else 1


def regression_targets(variant: RegressionVariant, gt: ShapeLike, points: np.ndarray) -> np.ndarray:
    """Reg1: vector to the closest ground-truth point. Reg2: -signed distance (movement along the outward normal)."""
    if variant is RegressionVariant.REG1:
        return geometry.closest_points(gt, points) - points
    return -geometry.signed_distances(gt, points)[:, None]


class Regressor(ABC):
    variant: RegressionVariant

    @abstractmethod
    def predict(self, inputs: np.ndarray, points: np.ndarray) -> np.ndarray:
        """(k, 2) offsets for Reg1, (k, 1) normal distances for Reg2."""


class MlpRegressor(Regressor):
    """Same MLP body as the IPC, linear output head."""

    def __init__(self, variant: RegressionVariant, params: Optional[IpcParams] = None):
        self.variant = RegressionVariant(variant)
        self.params = params

    @property
    def trained(self) -> bool:
        return self.params is not None

    def predict(self, inputs: np.ndarray, points: np.ndarray) -> np.ndarray:
        if self.params is None:
            raise HarnessError(f"{self.variant.value} regressor is untrained")
        return mlp_forward(self.params.weights, self.params.biases, inputs)


class OracleRegressor(Regressor):
    """Returns exact targets from the ground truth; an upper bound for the trained models."""

    def __init__(self, variant: RegressionVariant, gt: ShapeLike):
        self.variant = RegressionVariant(variant)
        self.gt = gt

    def predict(self, inputs: np.ndarray, points: np.ndarray) -> np.ndarray:
        return regression_targets(self.variant, self.gt, points)


def fit_regressor(variant: RegressionVariant, samples: SampleSet, gt: ShapeLike,
                  cfg: Optional[TrainConfig] = None, rng: Optional[np.random.Generator] = None) -> MlpRegressor:
    """L1 fit of the capacity-matched regressor on the IPC's band samples."""
    variant = RegressionVariant(variant)
    cfg = cfg or TrainConfig(learning_rate=settings.REGRESSION_LEARNING_RATE)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    dims = [samples.features.shape[1] + 2] + [settings.IPC_DIMS['hidden']] * 3 + [variant.outputs]
    inputs = samples.inputs
    targets = regression_targets(variant, gt, samples.points)

    def objective(x, idx):
        params = IpcParams.from_flat(x, dims)
        rows = slice(None) if idx is None else idx
        pred, layer_inputs, pre = mlp_forward(params.weights, params.biases, inputs[rows], return_cache=True)
        residual = pred - targets[rows]
        loss = float(np.abs(residual).sum(axis=1).mean())
        if idx is None:
            return loss, None
        return loss, mlp_backward(params.weights, layer_inputs, pre, np.sign(residual) / len(residual))

    x, log = descend(objective, init_params(dims, rng).flatten(), len(samples), cfg)
    logger.info("%s regressor fit: L1 %.4f px", variant.value, log['loss'].iloc[-1] if len(log) else float('nan'))
    return MlpRegressor(variant, IpcParams.from_flat(x, dims))


def reg_baseline_refine(variant: RegressionVariant, contour: Polygon, grid: FeatureGrid, box: BBox,
                        model: Optional[Regressor], cfg: Optional[EvolutionConfig] = None,
                        A: Optional[float] = None) -> Polygon:
    """
    One-shot regression update of every vertex.

    Reg1 moves x to x + delta. Reg2 moves x along its normal by t, with t
    clamped to +/- 0.5 * lambda * sqrt(A) * M.
    """
    variant = RegressionVariant(variant)
    if model is None or (isinstance(model, MlpRegressor) and not model.trained):
        raise HarnessError(f"{variant.value} regressor is untrained")
    if model.variant is not variant:
        raise HarnessError(f"model is a {model.variant.value} regressor, asked for {variant.value}")
    cfg = cfg or EvolutionConfig()
    points = contour.vertices
    inputs = np.hstack([grid.sample(points), relative_coords(points, box)])
    out = model.predict(inputs, points)
    if variant is RegressionVariant.REG1:
        return Polygon(points + out)

    A = geometry.bbox(contour).area if A is None else A
    limit = 0.5 * cfg.lambda_ * math.sqrt(A) * cfg.max_steps
    t = np.clip(out[:, 0], -limit, limit)
    return Polygon(points + t[:, None] * geometry.vertex_normals(contour))


# ── Sweeps ─────────────────────────────────────────────────────────────

def _parse_value(text: str):
    lowered = text.strip().lower()
    if lowered in ('true', 'false'):
        return lowered == 'true'
    try:
        return int(lowered)
    except ValueError:
        pass
    try:
        return float(lowered)
    except ValueError as exc:
        raise ConfigError(f"sweep value {text!r} is not a number or boolean") from exc


def _sweep_keys() -> set[str]:
    return set(EvolutionConfig().to_dict())


def parse_sweep(items: Sequence[str]) -> dict[str, list]:
    """['iterations=1,2,3', 'lambda=0.003,0.006'] -> {'iterations': [1, 2, 3], 'lambda': [0.003, 0.006]}."""
    grid: dict[str, list] = {}
    for item in items:
        key, sep, values = item.partition('=')
        key = key.strip()
        if not sep or not values.strip():
            raise ConfigError(f"sweep {item!r} must look like KEY=V1,V2")
        if key not in _sweep_keys():
            raise ConfigError(f"unknown sweep parameter {key!r}")
        grid[key] = [_parse_value(v) for v in values.split(',')]
    return grid


def load_sweep_config(text: str) -> dict[str, list]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sweep config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not all(isinstance(v, list) and v for v in data.values()):
        raise ConfigError("sweep config must map parameter names to non-empty lists")
    unknown = sorted(set(data) - _sweep_keys())
    if unknown:
        raise ConfigError(f"unknown sweep parameter(s): {', '.join(unknown)}")
    return data


def sweep_grid(base: EvolutionConfig, sweep: dict[str, list]) -> list[EvolutionConfig]:
    """Cartesian product of the sweep values over `base`, first key varying slowest."""
    if not sweep:
        return [base]
    keys = list(sweep)
    configs = []
    for combo in itertools.product(*(sweep[k] for k in keys)):
        data = base.to_dict() | dict(zip(keys, combo))
        configs.append(EvolutionConfig.from_dict(data))
    return configs


FieldFactory = Callable[[CorpusItem], ProbabilityField]


def oracle_field(item: CorpusItem, tau: float = 0.0) -> ProbabilityField:
    return analytic_oracle(item.gt, tau=tau)


def oracle_factory(tau: float = 0.0) -> FieldFactory:
    """Oracle fields of the given sharpness; tau = 0 is the hard indicator."""
    if tau < 0:
        raise ConfigError(f"oracle tau must be >= 0, got {tau}")
    return functools.partial(oracle_field, tau=tau)


@dataclass
class SweepResult:
    report: pd.DataFrame
    timings: pd.DataFrame
    traces: dict = field(default_factory=dict)


def _run_cell(item: CorpusItem, cfg: EvolutionConfig, specs: Sequence[PerturbSpec],
              field_factory: FieldFactory) -> tuple[MetricsReport, list[EvolutionTrace], float]:
    config_hash = cfg.config_hash()
    try:
        start = initial_contour(item.gt, specs, seed=item.spec.seed)
        started = time.perf_counter()
        traces = refine_shape(start, field_factory(item), cfg)
        runtime_ms = 1000.0 * (time.perf_counter() - started)
        frozen = float(np.mean([t.frozen_fraction() for t in traces]))
        report = evaluate_instance([t.final for t in traces], item.gt, item.width, item.height,
                                   instance=item.name, method='sharpcontour', config_hash=config_hash,
                                   frozen_fraction=frozen, runtime_ms=runtime_ms)
    except HarnessError:
        raise
    except SharpContourError as exc:
        raise HarnessError(f"sweep cell failed: {exc}", shape=item.name, config_hash=config_hash) from exc
    return report, traces, runtime_ms


def run_sweep(corpus: Sequence[CorpusItem], configs: Sequence[EvolutionConfig],
              perturbation: Optional[Sequence[PerturbSpec]] = None, workers: int = settings.WORKERS,
              field_factory: FieldFactory = oracle_field, keep_traces: bool = False) -> SweepResult:
    """One metrics row per (config, shape); wall-clock times go to a separate frame."""
    if not corpus:
        raise HarnessError("empty corpus")
    specs = list(perturbation) if perturbation is not None else acceptance_perturbation()
    cells = [(item, cfg) for cfg in configs for item in corpus]
    logger.info("Sweep: %d configs x %d shapes = %d cells, %d worker(s)",
                len(configs), len(corpus), len(cells), workers)

    def run(cell):
        return _run_cell(cell[0], cell[1], specs, field_factory)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(cell) for cell in cells]

    rows, timing_rows, traces = [], [], {}
    for (item, cfg), (report, cell_traces, runtime_ms) in zip(cells, results):
        config_columns = cfg.to_dict()
        config_columns.pop('seed')
        rows.append({'kind': item.kind.value} | report.to_row() | config_columns)
        timing_rows.append({'instance': item.name, 'config_hash': report.config_hash,
                            'resolution': cfg.resolution, 'runtime_ms': runtime_ms})
        if keep_traces:
            traces[(item.name, report.config_hash)] = cell_traces
    return SweepResult(pd.DataFrame(rows), pd.DataFrame(timing_rows), traces)


def summarize_sweep(report: pd.DataFrame) -> pd.DataFrame:
    """Corpus means per config, in first-seen config order."""
    keys = [c for c in ('config_hash', 'lambda', 'max_steps', 'resolution', 'iterations', 'adaptive_step')
            if c in report.columns]
    metrics = ['mask_iou', 'boundary_iou', 'mean_distance', 'hausdorff', 'frozen_fraction']
    return report.groupby(keys, sort=False)[metrics].mean().reset_index()


def iterations_to_tolerance(corpus: Sequence[CorpusItem], cfg: EvolutionConfig, tolerance: float = 0.5,
                            max_iterations: int = 10,
                            perturbation: Optional[Sequence[PerturbSpec]] = None,
                            field_factory: FieldFactory = oracle_field) -> Optional[int]:
    """Smallest n whose corpus-mean vertex distance to the ground truth is <= tolerance (None if never)."""
    specs = list(perturbation) if perturbation is not None else acceptance_perturbation()
    long_cfg = cfg.with_overrides(iterations=max_iterations)
    per_iteration = np.zeros(max_iterations + 1)
    for item in corpus:
        traces = refine_shape(initial_contour(item.gt, specs, seed=item.spec.seed), field_factory(item), long_cfg)
        for k in range(max_iterations + 1):
            vertices = np.concatenate([t.contours[k].vertices for t in traces])
            per_iteration[k] += np.abs(geometry.signed_distances(item.gt, vertices)).mean()
    per_iteration /= len(corpus)
    logger.debug("Mean distance per iteration: %s", np.round(per_iteration, 4).tolist())
    hits = np.flatnonzero(per_iteration[1:] <= tolerance)
    return int(hits[0]) + 1 if len(hits) else None


def compare_with_baselines(corpus: Sequence[CorpusItem], perturbation: Sequence[PerturbSpec],
                           evolution_cfg: Optional[EvolutionConfig] = None,
                           train_cfg: Optional[TrainConfig] = None,
                           regression_cfg: Optional[TrainConfig] = None,
                           seed: int = 0) -> pd.DataFrame:
    """
    IPC-driven evolution vs the Reg1 / Reg2 one-shot baselines.

    Per shape: one synthetic feature grid and one set of band samples feed
    all three models, and the box is that of the coarse contour.
    Default training uses the denser BASELINE_TRAIN schedule for every model.
    """
    evolution_cfg = evolution_cfg or EvolutionConfig()
    train_cfg = train_cfg or TrainConfig(seed=seed, **settings.BASELINE_TRAIN)
    regression_cfg = regression_cfg or TrainConfig(seed=seed, learning_rate=settings.REGRESSION_LEARNING_RATE,
                                                   **settings.BASELINE_TRAIN)
    config_hash = evolution_cfg.config_hash()
    rows = []
    for item in corpus:
        rng = np.random.default_rng([seed, item.spec.seed])
        grid = feature_grid_for(item, seed=seed)
        start = initial_contour(item.gt, perturbation, seed=item.spec.seed)
        box = geometry.bbox(start)
        samples = sample_boundary_points(item.gt, grid, train_cfg, rng, box=box)

        params = fit_instance(init_params(rng=rng), samples, train_cfg)
        traces = refine_shape(start, instance_field(grid, InstanceContext(box, params)), evolution_cfg)
        predictions = {'sharpcontour': [t.final for t in traces]}
        for variant in RegressionVariant:
            model = fit_regressor(variant, samples, item.gt, regression_cfg, rng)
            predictions[variant.value] = [reg_baseline_refine(variant, ring, grid, box, model, evolution_cfg)
                                          for ring in start]
        predictions['initial'] = start

        for method, pred in predictions.items():
            report = evaluate_instance(pred, item.gt, item.width, item.height, instance=item.name,
                                       method=method, config_hash=config_hash)
            rows.append(report.to_row())
        logger.info("Baselines on %s done", item.name)
    return pd.DataFrame(rows)


def _points_inside(region: Polygon, count: int, rng: np.random.Generator) -> np.ndarray:
    box = geometry.bbox(region)
    found = []
    total = 0
    for _ in range(1000):
        candidates = rng.uniform([box.min.x, box.min.y], [box.max.x, box.max.y], size=(4 * count, 2))
        inside = candidates[geometry.contains(region, candidates)]
        found.append(inside)
        total += len(inside)
        if total >= count:
            break
    if total == 0:
        raise HarnessError("could not sample inside the overlap region")
    return np.concatenate(found)[:count]


def instance_awareness(scene: OverlapScene, cfg: Optional[TrainConfig] = None, use_hypernetwork: bool = False,
                       overlap_points: int = 500, seed: int = 0) -> pd.DataFrame:
    """
    Per-instance classifiers on an occlusion scene.

    Reports held-out band accuracy per instance and the fraction of sampled points
    inside the shared region that the two instances label differently.
    """
    cfg = cfg or TrainConfig(seed=seed)
    rng = np.random.default_rng(seed)
    splits = {}
    for inst in scene.instances:
        samples = sample_boundary_points(inst.gt, scene.grid, cfg, rng, box=inst.box, instance_id=inst.instance_id)
        splits[inst.instance_id] = split_samples(samples, cfg)

    if use_hypernetwork:
        embeddings = {i: instance_embedding(scene.grid, scene.instance(i).box) for i in splits}
        head = train_hypernetwork(init_hypernetwork(rng=rng),
                                  [(embeddings[i], splits[i][0]) for i in splits], cfg).hypernet
        params = {i: hypernet_forward(head, embeddings[i]) for i in splits}
    else:
        params = {i: train_instance(init_params(rng=rng), splits[i][0], cfg).params for i in splits}

    points = _points_inside(scene.overlap, overlap_points, rng)
    features = scene.grid.sample(points)
    outside = {i: ipc_forward_batch(params[i], features, relative_coords(points, scene.instance(i).box)) > 0.5
               for i in splits}
    first, second = (outside[inst.instance_id] for inst in scene.instances[:2])
    disagreement = float(np.mean(first != second))

    mode = 'hypernetwork' if use_hypernetwork else 'direct'
    rows = [{
        'instance': i,
        'mode': mode,
        'train_accuracy': band_accuracy(params[i], splits[i][0]),
        'holdout_accuracy': band_accuracy(params[i], splits[i][1]),
        'overlap_outside_fraction': float(np.mean(outside[i])),
        'overlap_disagreement': disagreement,
    } for i in splits]
    logger.info("Instance awareness (%s): overlap disagreement %.3f", mode, disagreement)
    return pd.DataFrame(rows)
