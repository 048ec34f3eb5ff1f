"""
Contour evolution: discrete per-vertex marching toward flipping points.

One pass moves every non-frozen vertex along its normal:

    x'_i = x_i + m * s_i * d_i

d_i points inward when the classifier says the vertex is outside and
outward otherwise; s_i = lambda * sqrt(A) * |phi(x_i) - 0.5| (or the
constant 0.5 in place of the uncertainty when the adaptive step is off);
m is the first candidate k <= M whose classification is the opposite of the
start, or M if none is. A vertex that reaches a flipping point is frozen
for the rest of the evolution.

Each pass reads only the input contour (normals included), so vertices are
processed as one vectorized batch and the result does not depend on order.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from config import settings
from sharpcontour import geometry
from sharpcontour.errors import ConfigError, GeometryError
from sharpcontour.fields import ProbabilityField
from sharpcontour.geometry import Point2, Polygon, ShapeLike

logger = logging.getLogger(__name__)

_D = settings.EVOLUTION_DEFAULTS


@dataclass(frozen=True)
class EvolutionConfig:
    lambda_: float = _D['lambda']
    max_steps: int = _D['max_steps']
    resolution: int = _D['resolution']
    iterations: int = _D['iterations']
    adaptive_step: bool = _D['adaptive_step']
    freeze_epsilon: float = _D['freeze_epsilon']
    seed: int = _D['seed']
    midpoint_refine: bool = _D['midpoint_refine']

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.lambda_ > 0:
            raise ConfigError("lambda must be > 0")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.resolution < 3:
            raise ConfigError("resolution must be >= 3")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.freeze_epsilon < 0:
            raise ConfigError("freeze_epsilon must be >= 0")

    def to_dict(self) -> dict:
        data = asdict(self)
        data['lambda'] = data.pop('lambda_')
        return data

    @classmethod
    def from_dict(cls, data: dict) -> EvolutionConfig:
        known = {f.name for f in fields(cls)} - {'lambda_'} | {'lambda'}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown evolution config field(s): {', '.join(unknown)}")
        kwargs = dict(data)
        if 'lambda' in kwargs:
            kwargs['lambda_'] = kwargs.pop('lambda')
        try:
            kwargs = {k: _coerce(cls, k, v) for k, v in kwargs.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid evolution config value: {exc}") from exc
        return cls(**kwargs)

    def with_overrides(self, **overrides) -> EvolutionConfig:
        if 'lambda' in overrides:
            overrides['lambda_'] = overrides.pop('lambda')
        return replace(self, **overrides)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]


def _coerce(cls, name: str, value):
    kind = {f.name: f.type for f in fields(cls)}[name]
    if kind in ('bool', bool):
        if not isinstance(value, bool):
            raise TypeError(f"{name} must be a boolean")
        return value
    if kind in ('int', int):
        if isinstance(value, bool) or float(value) != int(value):
            raise TypeError(f"{name} must be an integer")
        return int(value)
    return float(value)


class VertexState(str, Enum):
    ACTIVE = 'active'
    EXHAUSTED = 'exhausted'
    FROZEN = 'frozen'


@dataclass(frozen=True)
class VertexStatus:
    state: VertexState = VertexState.ACTIVE
    steps_taken: int = 0
    step_size: float = 0.0


@dataclass
class EvolutionTrace:
    """C^(0) .. C^(n) plus the per-vertex status after each pass."""

    contours: list[Polygon]
    statuses: list[list[VertexStatus]] = field(default_factory=list)
    area: float = 0.0

    @property
    def final(self) -> Polygon:
        return self.contours[-1]

    def frozen_fraction(self) -> float:
        if not self.statuses:
            return 0.0
        last = self.statuses[-1]
        return sum(s.state == VertexState.FROZEN for s in last) / len(last)


def step_size(A: float, p, cfg: EvolutionConfig):
    """s = lambda * sqrt(A) * |p - 0.5|; constant lambda * sqrt(A) * 0.5 without the adaptive step."""
    if not A > 0:
        raise GeometryError(f"box area must be > 0, got {A}")
    p = np.asarray(p, dtype=float)
    uncertainty = np.abs(p - 0.5) if cfg.adaptive_step else np.full_like(p, 0.5)
    s = cfg.lambda_ * np.sqrt(A) * uncertainty
    return float(s) if s.ndim == 0 else s


def _classify(phi: np.ndarray) -> np.ndarray:
    return np.sign(phi - 0.5)


def march_vertices(field: ProbabilityField, xs: np.ndarray, normals: np.ndarray, steps: np.ndarray,
                   max_steps: int, freeze_epsilon: float = _D['freeze_epsilon'],
                   midpoint_refine: bool = False, phi0: Optional[np.ndarray] = None):
    """
    Batched march: every vertex tries x + k * s * d for k = 1..M.

    Returns (positions (k, 2), states, steps_taken). A candidate landing exactly on
    the decision boundary (phi == 0.5) does not count as flipped; the
    classification must reach the opposite side.
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, 2)
    normals = np.asarray(normals, dtype=float).reshape(-1, 2)
    steps = np.asarray(steps, dtype=float).reshape(-1)
    if max_steps < 1:
        raise GeometryError("max_steps must be >= 1")
    if np.any(steps < 0):
        raise GeometryError("step sizes must be >= 0")
    if not np.all(np.isfinite(normals)):
        raise GeometryError("non-finite normal")

    count = len(xs)
    positions = xs.copy()
    states = [VertexState.FROZEN] * count
    taken = np.zeros(count, dtype=int)
    if count == 0:
        return positions, states, taken

    start = _classify(field.evaluate(xs) if phi0 is None else phi0)
    direction = np.where(start[:, None] > 0, -normals, normals)
    moving = (start != 0) & (steps >= freeze_epsilon)
    if not np.any(moving):
        return positions, states, taken

    idx = np.flatnonzero(moving)
    k = np.arange(1, max_steps + 1)
    offsets = (k[None, :, None] * steps[idx, None, None]) * direction[idx, None, :]
    candidates = xs[idx, None, :] + offsets
    candidate_class = _classify(field.evaluate(candidates.reshape(-1, 2))).reshape(len(idx), max_steps)

    flipped = candidate_class == -start[idx, None]
    any_flip = flipped.any(axis=1)
    first = np.where(any_flip, flipped.argmax(axis=1) + 1, max_steps)

    rows = np.arange(len(idx))
    if midpoint_refine:
        # halfway between the last unflipped candidate and the flipped one
        landing = xs[idx] + (first - 0.5 * any_flip)[:, None] * steps[idx, None] * direction[idx]
    else:
        landing = candidates[rows, first - 1]
    positions[idx] = landing
    taken[idx] = first
    for j, i in enumerate(idx):
        states[i] = VertexState.FROZEN if any_flip[j] else VertexState.EXHAUSTED
    return positions, states, taken


def march_vertex(field: ProbabilityField, x: Point2, normal, s: float, M: int,
                 freeze_epsilon: float = _D['freeze_epsilon'],
                 midpoint_refine: bool = False) -> tuple[Point2, VertexStatus]:
    """Walk one vertex along +/- normal until the classification flips or M steps are used."""
    normal = np.asarray(normal, dtype=float)
    if normal.shape != (2,) or not np.all(np.isfinite(normal)):
        raise GeometryError("non-finite normal")
    if s < 0:
        raise GeometryError("step size must be >= 0")
    positions, states, taken = march_vertices(field, x.as_array(), normal, np.array([s]), M,
                                              freeze_epsilon=freeze_epsilon,
                                              midpoint_refine=midpoint_refine)
    pos = positions[0]
    return Point2(float(pos[0]), float(pos[1])), VertexStatus(states[0], int(taken[0]), float(s))


def evolve_once(c: Polygon, field: ProbabilityField, A: float, cfg: EvolutionConfig,
                statuses: Optional[Sequence[VertexStatus]] = None) -> tuple[Polygon, list[VertexStatus]]:
    """One evolution pass; frozen vertices are copied through untouched."""
    n = len(c)
    if statuses is None:
        statuses = [VertexStatus()] * n
    if len(statuses) != n:
        raise GeometryError(f"{len(statuses)} statuses for {n} vertices")

    vertices = c.vertices
    normals = geometry.vertex_normals(c)
    active = np.array([s.state != VertexState.FROZEN for s in statuses])
    out = vertices.copy()
    new_statuses = list(statuses)

    idx = np.flatnonzero(active)
    if len(idx):
        phi = field.evaluate(vertices[idx])
        steps = np.atleast_1d(step_size(A, phi, cfg))
        positions, states, taken = march_vertices(
            field, vertices[idx], normals[idx], steps, cfg.max_steps,
            freeze_epsilon=cfg.freeze_epsilon, midpoint_refine=cfg.midpoint_refine, phi0=phi,
        )
        out[idx] = positions
        for j, i in enumerate(idx):
            new_statuses[i] = VertexStatus(states[j], int(taken[j]), float(steps[j]))

    return Polygon(out), new_statuses


def evolve(c0: Polygon, field: ProbabilityField, cfg: EvolutionConfig) -> EvolutionTrace:
    """
    Resample to N vertices, fix A to the tight box of C^(0), and run n passes.

    Once every vertex is frozen the remaining contours are copies of the last
    one, so the trace always holds n + 1 contours.
    """
    contour = geometry.resample(c0, cfg.resolution)
    area = geometry.bbox(contour).area
    if not area > 0:
        raise GeometryError("initial contour has a zero-area bounding box")

    trace = EvolutionTrace(contours=[contour], statuses=[], area=area)
    statuses = [VertexStatus()] * len(contour)
    for iteration in range(cfg.iterations):
        if all(s.state == VertexState.FROZEN for s in statuses):
            trace.contours.append(contour)
            trace.statuses.append(list(statuses))
            continue
        contour, statuses = evolve_once(contour, field, area, cfg, statuses)
        trace.contours.append(contour)
        trace.statuses.append(statuses)
        logger.debug("Iteration %d: %.1f%% frozen", iteration + 1, 100.0 * trace.frozen_fraction())
    return trace


def refine_shape(shape: ShapeLike, field: ProbabilityField, cfg: EvolutionConfig) -> list[EvolutionTrace]:
    """Evolve every ring (outer and holes) independently, each with its own A."""
    return [evolve(ring, field, cfg) for ring in geometry.as_rings(shape)]
