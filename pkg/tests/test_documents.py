import json

import numpy as np
import pytest

from sharpcontour import documents, geometry
from sharpcontour.errors import ConfigError, ParseError
from sharpcontour.evolution import EvolutionConfig
from sharpcontour.fields import FeatureGrid
from sharpcontour.geometry import Orientation
from sharpcontour.ipc_training import init_params
from tests.conftest import circle, square, write_document


# ── PolygonDocument ────────────────────────────────────────────────────

def test_document_round_trip(tmp_path):
    outer = square(10.0, -60.0, 40.0)
    hole = square(20.0, -50.0, 10.0).reversed()
    doc = documents.PolygonDocument.single([outer, hole], instance_id='cell')
    path = documents.save_polygons(doc, tmp_path / 'doc.json')

    loaded = documents.load_polygons(path)
    (inst,) = loaded.instances
    assert inst.id == 'cell'
    np.testing.assert_array_equal(inst.rings[0].vertices, outer.vertices)
    assert inst.rings[1].orientation is Orientation.CW
    assert json.loads(path.read_text())['instances'][0]['bbox'] == [10.0, 20.0, 40.0, 40.0]


def test_document_files_use_image_coordinates(tmp_path):
    path = write_document(tmp_path / 'tri.json', [[[0, 0], [10, 0], [0, 10]]])
    (ring,) = documents.load_polygons(path).instance('0').rings
    assert geometry.bbox(ring).max.y == 0.0
    assert geometry.bbox(ring).min.y == -10.0
    # outer rings come back counter-clockwise whatever the file order
    assert ring.orientation is Orientation.CCW


def test_declared_bbox_must_match():
    data = {'instances': [{'id': 'a', 'bbox': [0, 0, 5, 5], 'contours': [[[0, 0], [10, 0], [10, 10], [0, 10]]]}]}
    with pytest.raises(ParseError, match='bbox'):
        documents.PolygonDocument.from_dict(data)
    data['instances'][0]['bbox'] = [0, 0, 10, 10]
    assert documents.PolygonDocument.from_dict(data).instance('a').box.area == 100.0


@pytest.mark.parametrize('data', [
    {'instances': [{'id': 'a', 'contours': [[[0, 0], [1, 1]]]}]},
    {'instances': [{'id': 'a', 'contours': []}]},
    {'instances': [{'id': 'a'}]},
    {'instances': 'none'},
    {'coordinate_convention': 'math', 'instances': []},
])
def test_malformed_documents(data):
    with pytest.raises(ParseError):
        documents.PolygonDocument.from_dict(data)


def test_invalid_json_reports_the_offset(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"instances": [}')
    with pytest.raises(ParseError) as info:
        documents.load_polygons(path)
    assert info.value.offset == 15


def test_missing_instance():
    doc = documents.PolygonDocument.single([square(0.0, 0.0, 5.0)])
    with pytest.raises(ParseError):
        doc.instance('7')


def test_trace_document(tmp_path):
    steps = [[circle(10.0 + k, 32, center=(20.0, -20.0))] for k in range(3)]
    doc = documents.load_polygons(documents.save_trace({'x': steps, 'y': steps[:1]}, tmp_path / 'trace.json'))
    assert [inst.id for inst in doc.instances] == ['x/0', 'x/1', 'x/2', 'y/0']


# ── oracle strings ─────────────────────────────────────────────────────

def test_circle_oracle_in_image_coordinates():
    oracle = documents.parse_oracle('circle:64,40,20')
    np.testing.assert_array_equal(oracle.evaluate([[64.0, -40.0], [64.0, -80.0]]), [0.0, 1.0])
    soft = documents.parse_oracle('circle:64,40,20,2')
    # 1 px inside the rim
    assert 0.0 < soft.evaluate([[64.0, -59.0]])[0] < 0.5


def test_polygon_oracle(tmp_path):
    path = write_document(tmp_path / 'gt.json', [[[10, 10], [50, 10], [50, 50], [10, 50]]])
    oracle = documents.parse_oracle(f"poly:{path}")
    np.testing.assert_array_equal(oracle.evaluate([[30.0, -30.0], [70.0, -30.0]]), [0.0, 1.0])
    assert documents.parse_oracle(f"poly:{path},1.5").tau == 1.5


@pytest.mark.parametrize('text', ['circle', 'circle:1,2', 'circle:a,b,c', 'ellipse:1,2,3', 'circle:1,2,3,4,5'])
def test_bad_oracle_strings(text):
    with pytest.raises(ParseError):
        documents.parse_oracle(text)


# ── params, configs, features ──────────────────────────────────────────

def test_params_round_trip(tmp_path):
    params = init_params(rng=np.random.default_rng(5))
    loaded = documents.load_params(documents.save_params(params, tmp_path / 'ipc.json'))
    assert loaded.dims == [18, 16, 16, 16, 1]
    np.testing.assert_array_equal(loaded.flatten(), params.flatten())


def test_params_carry_the_training_box(tmp_path):
    params = init_params(rng=np.random.default_rng(5))
    box = geometry.bbox(square(10.0, -60.0, 40.0))
    path = documents.save_params(params, tmp_path / 'ipc.json', box=box)
    assert json.loads(path.read_text())['box'] == [10.0, 20.0, 40.0, 40.0]
    loaded, loaded_box = documents.load_ipc_context(path)
    np.testing.assert_array_equal(loaded.flatten(), params.flatten())
    assert loaded_box == box
    assert documents.load_ipc_context(documents.save_params(params, tmp_path / 'bare.json'))[1] is None


def test_malformed_training_box(tmp_path):
    data = init_params(rng=np.random.default_rng(5)).to_dict() | {'box': [0, 0, -1, 4]}
    path = tmp_path / 'ipc.json'
    path.write_text(json.dumps(data))
    with pytest.raises(ParseError, match='box'):
        documents.load_ipc_context(path)


def test_params_with_wrong_dims(tmp_path):
    data = init_params(rng=np.random.default_rng(5)).to_dict()
    data['dims'] = [18, 16, 1]
    path = tmp_path / 'ipc.json'
    path.write_text(json.dumps(data))
    with pytest.raises(ParseError):
        documents.load_params(path)


def test_evolution_config_files(tmp_path):
    cfg = EvolutionConfig(lambda_=0.006, iterations=4)
    assert documents.load_evolution_config(documents.save_evolution_config(cfg, tmp_path / 'cfg.json')) == cfg
    assert documents.load_evolution_config(None) == EvolutionConfig()

    bad = tmp_path / 'bad.json'
    bad.write_text('{"lambda": 0}')
    with pytest.raises(ConfigError, match='lambda must be > 0'):
        documents.load_evolution_config(bad)
    bad.write_text('[1, 2]')
    with pytest.raises(ConfigError):
        documents.load_evolution_config(bad)


def test_features_round_trip(tmp_path):
    grid = FeatureGrid(np.random.default_rng(1).normal(size=(6, 9, 4)))
    loaded = documents.load_features(documents.save_features(grid, tmp_path / 'features.npy'))
    np.testing.assert_array_equal(loaded.data, grid.data)

    flat = tmp_path / 'flat.npy'
    np.save(flat, np.zeros((6, 9)))
    with pytest.raises(ParseError):
        documents.load_features(flat)


# ── SVG ────────────────────────────────────────────────────────────────

def test_svg_layers_in_order():
    ring = circle(20.0, 16, center=(30.0, -30.0))
    svg = documents.render_svg(60, 60, initial=[ring], iterations=[[ring], [ring]], final=[ring],
                               ground_truth=[ring])
    ids = ['ground_truth', 'initial', 'iteration_1', 'iteration_2', 'final']
    positions = [svg.index(f'id="{name}"') for name in ids]
    assert positions == sorted(positions)
    assert 'viewBox="0 0 60 60"' in svg
    assert '#d32f2f' in svg and '#2e7d32' in svg


def test_svg_is_deterministic_and_uses_image_coordinates(tmp_path):
    ring = square(10.0, -30.0, 20.0)
    svg = documents.render_svg(40, 40, final=[ring])
    assert svg == documents.render_svg(40, 40, final=[ring])
    assert 'M 10.000 30.000' in svg
    assert 'id="initial"' not in svg
    path = documents.save_svg(svg, tmp_path / 'out.svg')
    assert path.read_text() == svg
