"""
On-disk documents: PolygonDocument JSON, IpcParams JSON, EvolutionConfig JSON,
feature grids (.npy) and the layered SVG rendering.

Files use image coordinates (x right, y down); everything in memory uses math
coordinates. The conversion is done here on load and save.
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from io import BytesIO
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from config import settings
from sharpcontour import geometry
from sharpcontour.errors import ConfigError, FieldError, GeometryError, ParseError
from sharpcontour.evolution import EvolutionConfig
from sharpcontour.fields import AnalyticOracle, FeatureGrid, IpcParams, analytic_oracle
from sharpcontour.files import atomic_write
from sharpcontour.geometry import BBox, Point2, Polygon
from sharpcontour.raster import image_to_math, math_to_image

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BBOX_TOLERANCE = 1e-6


def _load_json(text: Union[str, bytes], what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what} is not valid JSON: {exc.msg}", offset=exc.pos) from exc


def _dump_json(data) -> str:
    return json.dumps(data, indent=2) + '\n'


# ── PolygonDocument ────────────────────────────────────────────────────

@dataclass(frozen=True)
class DocumentInstance:
    """One instance: its rings in math coordinates."""

    id: str
    rings: tuple[Polygon, ...]

    def image_bbox(self) -> list[float]:
        return _box_to_image(self.box)

    @property
    def box(self) -> BBox:
        return geometry.bbox(list(self.rings))


@dataclass
class PolygonDocument:
    instances: list[DocumentInstance] = field(default_factory=list)
    coordinate_convention: str = 'image'

    def instance(self, instance_id: str) -> DocumentInstance:
        for inst in self.instances:
            if inst.id == str(instance_id):
                return inst
        raise ParseError(f"document has no instance {instance_id!r}")

    def to_dict(self) -> dict:
        return {
            'coordinate_convention': self.coordinate_convention,
            'instances': [
                {
                    'id': inst.id,
                    'bbox': inst.image_bbox(),
                    'contours': [math_to_image(ring.vertices).tolist() for ring in inst.rings],
                }
                for inst in self.instances
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> PolygonDocument:
        if not isinstance(data, dict) or not isinstance(data.get('instances'), list):
            raise ParseError("polygon document needs an 'instances' list")
        convention = data.get('coordinate_convention', 'image')
        if convention != 'image':
            raise ParseError(f"unsupported coordinate_convention {convention!r}")

        instances = []
        for k, raw in enumerate(data['instances']):
            try:
                contours = raw['contours']
                if not contours:
                    raise ParseError(f"instance {k} has no contours")
                rings = []
                for ring in contours:
                    if len(ring) < 3:
                        raise ParseError(f"instance {k}: ring with {len(ring)} points, need >= 3")
                    rings.append(Polygon(image_to_math(np.asarray(ring, dtype=float))))
            except (KeyError, TypeError, ValueError, GeometryError) as exc:
                raise ParseError(f"instance {k} is malformed: {exc}") from exc

            inst = DocumentInstance(str(raw.get('id', k)), tuple(geometry.orient_rings(rings)))
            if 'bbox' in raw:
                declared = np.asarray(raw['bbox'], dtype=float)
                if declared.shape != (4,) or np.max(np.abs(declared - inst.image_bbox())) > BBOX_TOLERANCE:
                    raise ParseError(f"instance {inst.id}: bbox {raw['bbox']} disagrees with its contours")
            instances.append(inst)
        return cls(instances, convention)

    @classmethod
    def single(cls, rings: Sequence[Polygon], instance_id: str = '0') -> PolygonDocument:
        return cls([DocumentInstance(str(instance_id), tuple(rings))])


def load_polygons(path: PathLike) -> PolygonDocument:
    return PolygonDocument.from_dict(_load_json(Path(path).read_bytes(), f"polygon document {path}"))


def save_polygons(doc: PolygonDocument, path: PathLike) -> Path:
    return atomic_write(path, _dump_json(doc.to_dict()))


def save_trace(steps_by_instance: dict[str, Sequence[Sequence[Polygon]]], path: PathLike) -> Path:
    """One document holding every C^(k) of every instance, as instances '<id>/k'."""
    doc = PolygonDocument([DocumentInstance(f"{instance_id}/{k}", tuple(rings))
                           for instance_id, steps in steps_by_instance.items()
                           for k, rings in enumerate(steps)])
    return save_polygons(doc, path)


# ── Parameters and configs ─────────────────────────────────────────────

def _box_from_image(values, what: str) -> BBox:
    try:
        box = np.asarray(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{what}: box is not numeric: {exc}") from exc
    if box.shape != (4,) or not np.all(np.isfinite(box)) or box[2] <= 0 or box[3] <= 0:
        raise ParseError(f"{what}: box must be [x, y, width, height] with a positive size")
    x, y, w, h = box
    return BBox(Point2(float(x), float(-(y + h))), Point2(float(x + w), float(-y)))


def _box_to_image(box: BBox) -> list[float]:
    # math y is negated image y, so the image top is -max.y
    return [box.min.x, -box.max.y, box.width, box.height]


def load_ipc_context(path: PathLike) -> tuple[IpcParams, Optional[BBox]]:
    """Params plus the instance box their relative coordinates were fit against (None if not recorded)."""
    data = _load_json(Path(path).read_bytes(), f"IPC params {path}")
    try:
        params = IpcParams.from_dict(data)
    except FieldError as exc:
        raise ParseError(str(exc)) from exc
    box = data.get('box') if isinstance(data, dict) else None
    return params, (_box_from_image(box, f"IPC params {path}") if box is not None else None)


def load_params(path: PathLike) -> IpcParams:
    return load_ipc_context(path)[0]


def save_params(params: IpcParams, path: PathLike, box: Optional[BBox] = None) -> Path:
    data = params.to_dict()
    if box is not None:
        data['box'] = _box_to_image(box)
    return atomic_write(path, _dump_json(data))


def load_evolution_config(path: Optional[PathLike]) -> EvolutionConfig:
    """Defaults when no path is given; invalid values raise ConfigError."""
    if path is None:
        return EvolutionConfig()
    data = _load_json(Path(path).read_bytes(), f"evolution config {path}")
    if not isinstance(data, dict):
        raise ConfigError("evolution config must be a JSON object")
    return EvolutionConfig.from_dict(data)


def save_evolution_config(cfg: EvolutionConfig, path: PathLike) -> Path:
    return atomic_write(path, _dump_json(cfg.to_dict()))


def load_features(path: PathLike) -> FeatureGrid:
    try:
        data = np.load(Path(path), allow_pickle=False)
    except ValueError as exc:
        raise ParseError(f"feature grid {path} is not a numeric .npy array: {exc}") from exc
    try:
        return FeatureGrid(np.asarray(data, dtype=float))
    except FieldError as exc:
        raise ParseError(str(exc)) from exc


def save_features(grid: FeatureGrid, path: PathLike) -> Path:
    buffer = BytesIO()
    np.save(buffer, grid.data, allow_pickle=False)
    return atomic_write(path, buffer.getvalue())


# ── Oracle mini-language ───────────────────────────────────────────────

def parse_oracle(text: str) -> AnalyticOracle:
    """'circle:cx,cy,r[,tau]' or 'poly:FILE[,tau]', image coordinates."""
    kind, sep, body = text.partition(':')
    if not sep or not body:
        raise ParseError(f"oracle {text!r} must look like circle:cx,cy,r[,tau] or poly:FILE[,tau]")
    if kind == 'circle':
        try:
            values = [float(v) for v in body.split(',')]
        except ValueError as exc:
            raise ParseError(f"oracle {text!r}: {exc}") from exc
        if len(values) not in (3, 4):
            raise ParseError(f"circle oracle takes cx,cy,r[,tau], got {len(values)} values")
        cx, cy, r = values[:3]
        tau = values[3] if len(values) == 4 else 0.0
        circle = geometry.regular_polygon((cx, -cy), r, 720)
        return analytic_oracle(circle, tau)
    if kind == 'poly':
        path, _, tau_text = body.partition(',')
        try:
            tau = float(tau_text) if tau_text else 0.0
        except ValueError as exc:
            raise ParseError(f"oracle {text!r}: {exc}") from exc
        doc = load_polygons(path)
        rings = [ring for inst in doc.instances for ring in inst.rings]
        return analytic_oracle(rings, tau)
    raise ParseError(f"unknown oracle kind {kind!r}")


# ── SVG ────────────────────────────────────────────────────────────────

def _fmt(value: float) -> str:
    return f"{value:.3f}"


def _path_data(rings: Sequence[Polygon]) -> str:
    parts = []
    for ring in rings:
        pts = math_to_image(ring.vertices)
        head, *rest = pts
        parts.append(f"M {_fmt(head[0])} {_fmt(head[1])} "
                     + ' '.join(f"L {_fmt(x)} {_fmt(y)}" for x, y in rest) + ' Z')
    return ' '.join(parts)


def _blend(start: str, end: str, t: float) -> str:
    a = np.array([int(start[i:i + 2], 16) for i in (1, 3, 5)], dtype=float)
    b = np.array([int(end[i:i + 2], 16) for i in (1, 3, 5)], dtype=float)
    rgb = np.rint(a + t * (b - a)).astype(int)
    return '#' + ''.join(f"{c:02x}" for c in rgb)


def render_svg(width: int, height: int, *, initial: Optional[Sequence[Polygon]] = None,
               iterations: Sequence[Sequence[Polygon]] = (), final: Optional[Sequence[Polygon]] = None,
               ground_truth: Optional[Sequence[Polygon]] = None) -> str:
    """
    Layered overlay in source-raster pixels: initial gray, iterations on a blue
    gradient, final red, ground truth green. Output is byte-stable for equal input.
    """
    colors = settings.SVG_COLORS
    root = ET.Element('svg', {
        'xmlns': 'http://www.w3.org/2000/svg',
        'width': str(width),
        'height': str(height),
        'viewBox': f"0 0 {width} {height}",
    })
    layers = []
    if ground_truth:
        layers.append(('ground_truth', colors['ground_truth'], ground_truth, '1.5'))
    if initial:
        layers.append(('initial', colors['initial'], initial, '1'))
    for k, rings in enumerate(iterations):
        t = k / max(len(iterations) - 1, 1)
        layers.append((f"iteration_{k + 1}", _blend(colors['iteration_start'], colors['iteration_end'], t),
                       rings, '0.75'))
    if final:
        layers.append(('final', colors['final'], final, '1.25'))

    for name, color, rings, stroke_width in layers:
        group = ET.SubElement(root, 'g', {'id': name})
        ET.SubElement(group, 'path', {
            'd': _path_data(rings),
            'fill': 'none',
            'fill-rule': 'evenodd',
            'stroke': color,
            'stroke-width': stroke_width,
        })
    return ET.tostring(root, encoding='unicode') + '\n'


def save_svg(svg: str, path: PathLike) -> Path:
    return atomic_write(path, svg)
