import json

import numpy as np
import pandas as pd
import pytest

from sharpcontour import documents, metrics, raster
from sharpcontour.cli import main
from sharpcontour.raster import MaskGrid
from tests.conftest import write_document


def _square_image(lo, hi):
    return [[lo, lo], [hi, lo], [hi, hi], [lo, hi]]


@pytest.fixture
def scene(tmp_path):
    """Ground-truth square 20..80 and a coarse square 19..81, image coordinates."""
    return {
        'gt': write_document(tmp_path / 'gt.json', [_square_image(20, 80)]),
        'coarse': write_document(tmp_path / 'coarse.json', [_square_image(19, 81)]),
        'dir': tmp_path,
    }


def _mask(path):
    doc = documents.load_polygons(path)
    return raster.rasterize([r for inst in doc.instances for r in inst.rings], 100, 100)


# ── refine ─────────────────────────────────────────────────────────────

def test_refine_with_oracle_writes_all_outputs(scene, capsys):
    out = scene['dir'] / 'refined.json'
    svg = scene['dir'] / 'overlay.svg'
    code = main(['refine', '--polygons', str(scene['coarse']), '--oracle', f"poly:{scene['gt']}",
                 '--gt', str(scene['gt']), '--out', str(out), '--svg', str(svg), '--trace'])
    assert code == 0
    assert metrics.mask_iou(_mask(out), _mask(scene['gt'])) >= 0.99

    trace = documents.load_polygons(scene['dir'] / 'refined.trace.json')
    assert [inst.id for inst in trace.instances] == ['0/0', '0/1', '0/2', '0/3']
    assert 'id="final"' in svg.read_text()
    assert 'Mask IoU vs ground truth' in capsys.readouterr().out


def test_refine_from_a_mask(scene):
    rows, cols = np.mgrid[0:100, 0:100]
    values = ((cols + 0.5 - 50) ** 2 + (rows + 0.5 - 50) ** 2 <= 31.0 ** 2).astype(float)
    coarse = raster.write_pgm(MaskGrid(values), scene['dir'] / 'coarse.pgm')
    out = scene['dir'] / 'refined.json'
    assert main(['refine', '--mask', str(coarse), '--oracle', 'circle:50,50,30', '--out', str(out)]) == 0
    (ring,) = documents.load_polygons(out).instance('0').rings
    radii = np.linalg.norm(ring.vertices - [50.0, -50.0], axis=1)
    assert np.abs(radii - 30.0).mean() < 0.5


def test_refine_is_deterministic(scene):
    outputs = []
    for name in ('a.json', 'b.json'):
        out = scene['dir'] / name
        main(['refine', '--polygons', str(scene['coarse']), '--oracle', 'circle:50,50,30,1', '--out', str(out)])
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_refine_with_trained_ipc(scene, capsys):
    ipc = scene['dir'] / 'ipc.json'
    features = scene['dir'] / 'features.npy'
    assert main(['train', '--polygons', str(scene['gt']), '--out', str(ipc), '--epochs', '20',
                 '--features-out', str(features)]) == 0
    # relative coordinates were fit against the ground-truth box
    assert json.loads(ipc.read_text())['box'] == [20.0, 20.0, 60.0, 60.0]
    out = scene['dir'] / 'refined.json'
    assert main(['refine', '--polygons', str(scene['coarse']), '--ipc', str(ipc), '--features', str(features),
                 '--out', str(out)]) == 0
    assert len(documents.load_polygons(out).instance('0').rings) == 1
    assert 'instance box recorded at training time' in capsys.readouterr().out


# ── exit codes ─────────────────────────────────────────────────────────

def test_invalid_config_exits_3(scene, capsys):
    config = scene['dir'] / 'cfg.json'
    config.write_text(json.dumps({'lambda': 0}))
    code = main(['refine', '--polygons', str(scene['coarse']), '--oracle', 'circle:50,50,30',
                 '--config', str(config), '--out', str(scene['dir'] / 'x.json')])
    assert code == 3
    assert 'lambda must be > 0' in capsys.readouterr().err


def test_malformed_pgm_exits_2(scene, capsys):
    bad = scene['dir'] / 'bad.pgm'
    bad.write_bytes(b"P3\n2 2\n255\n0 0 0 0\n")
    assert main(['refine', '--mask', str(bad), '--oracle', 'circle:1,1,1', '--out', str(scene['dir'] / 'x.json')]) == 2
    assert 'Parse error' in capsys.readouterr().err


def test_ipc_without_features_exits_2(scene):
    ipc = scene['dir'] / 'ipc.json'
    ipc.write_text('{}')
    assert main(['refine', '--polygons', str(scene['coarse']), '--ipc', str(ipc),
                 '--out', str(scene['dir'] / 'x.json')]) == 2


def test_usage_errors_exit_2(scene):
    assert main(['refine', '--bogus']) == 2
    assert main(['frobnicate']) == 2
    assert main(['eval', '--pred', str(scene['dir'] / 'missing.json'), '--gt', str(scene['gt']),
                 '--out', str(scene['dir'] / 'm.csv')]) == 2


# ── train / bench / eval ───────────────────────────────────────────────

def test_train_writes_params_and_log(scene):
    ipc = scene['dir'] / 'ipc.json'
    log = scene['dir'] / 'log.csv'
    assert main(['train', '--polygons', str(scene['gt']), '--out', str(ipc), '--log', str(log),
                 '--epochs', '20']) == 0
    assert documents.load_params(ipc).size == 865
    frame = pd.read_csv(log)
    assert len(frame) == 20
    assert 'loss' in frame.columns


def test_bench_small_sweep(scene):
    out = scene['dir'] / 'sweep.csv'
    timings = scene['dir'] / 'timings.csv'
    assert main(['bench', '--suite', 'small', '--sweep', 'iterations=1,2', '--workers', '1',
                 '--out', str(out), '--timings', str(timings)]) == 0
    report = pd.read_csv(out)
    assert len(report) == 16
    assert 'runtime_ms' not in report.columns
    assert len(pd.read_csv(timings)) == 16


def test_bench_on_a_soft_oracle(scene):
    configs = {}
    for tau in ('0', '1.0'):
        out = scene['dir'] / f"tau_{tau}.csv"
        assert main(['bench', '--suite', 'small', '--sweep', 'adaptive_step=true,false', '--oracle-tau', tau,
                     '--out', str(out)]) == 0
        configs[tau] = pd.read_csv(out).groupby('adaptive_step')['mean_distance'].mean()
    assert configs['0'][True] == pytest.approx(configs['0'][False], abs=1e-9)
    assert configs['1.0'][True] != pytest.approx(configs['1.0'][False], abs=1e-9)
    assert main(['bench', '--suite', 'small', '--oracle-tau', '-1', '--out', str(scene['dir'] / 'x.csv')]) == 3


def test_eval_identical_documents(scene):
    out = scene['dir'] / 'metrics.csv'
    assert main(['eval', '--pred', str(scene['gt']), '--gt', str(scene['gt']), '--out', str(out)]) == 0
    row = pd.read_csv(out).iloc[0]
    assert row['mask_iou'] == 1.0
    assert row['boundary_iou'] == 1.0
    assert row['mean_distance'] == 0.0


# ── convert / render ───────────────────────────────────────────────────

def test_convert_round_trip(scene):
    values = np.zeros((100, 100))
    values[20:80, 30:70] = 1.0
    mask_path = raster.write_pgm(MaskGrid(values), scene['dir'] / 'mask.pgm')
    polygons = scene['dir'] / 'mask.json'
    back = scene['dir'] / 'back.pgm'
    assert main(['convert', '--mask', str(mask_path), '--out', str(polygons)]) == 0
    assert main(['convert', '--polygons', str(polygons), '--width', '100', '--height', '100',
                 '--out', str(back)]) == 0
    assert metrics.mask_iou(raster.read_pgm(back), MaskGrid(values)) >= 0.98


def test_convert_polygons_needs_a_size(scene):
    assert main(['convert', '--polygons', str(scene['gt']), '--out', str(scene['dir'] / 'x.pgm')]) == 2


def test_render_is_byte_stable(scene):
    first, second = scene['dir'] / 'a.svg', scene['dir'] / 'b.svg'
    for path in (first, second):
        assert main(['render', '--polygons', str(scene['coarse']), '--gt', str(scene['gt']),
                     '--out', str(path)]) == 0
    assert first.read_bytes() == second.read_bytes()
    assert 'id="ground_truth"' in first.read_text()
