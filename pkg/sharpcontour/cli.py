"""
SharpContour command line.

Usage:
    python scripts/sharpcontour.py refine  --mask coarse.pgm --oracle circle:64,64,40 --out refined.json
    python scripts/sharpcontour.py train   --polygons gt.json --out ipc.json --log train_log.csv
    python scripts/sharpcontour.py bench   --suite standard --sweep iterations=1,2,3,4 --out sweep.csv
    python scripts/sharpcontour.py eval    --pred refined.json --gt gt.json --out metrics.csv
    python scripts/sharpcontour.py convert --mask coarse.pgm --out coarse.json
    python scripts/sharpcontour.py render  --polygons refined.json --gt gt.json --out overlay.svg

Exit codes: 0 ok, 2 parse error, 3 config error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from config import settings
from sharpcontour import documents, geometry, harness, ipc_training, metrics, raster
from sharpcontour.errors import ConfigError, ParseError, SharpContourError
from sharpcontour.evolution import refine_shape
from sharpcontour.fields import InstanceContext, grid_field, instance_field, synthetic_feature_grid
from sharpcontour.files import write_csv
from sharpcontour.geometry import Polygon

# Fix Windows terminal encoding for emoji/Unicode
if sys.platform == 'win32':
    sys.stdout.reconfigure(encoding='utf-8', errors='replace')

logger = logging.getLogger(__name__)

EXIT = settings.EXIT_CODES


def _canvas(rings: Sequence[Polygon], pad: int = 2) -> tuple[int, int]:
    """Smallest raster (plus padding) that holds every ring, in image coordinates."""
    box = geometry.bbox(list(rings))
    return int(math.ceil(max(box.max.x, 1.0))) + pad, int(math.ceil(max(-box.min.y, 1.0))) + pad


def _load_contours(args) -> tuple[documents.PolygonDocument, Optional[raster.MaskGrid]]:
    if args.mask:
        mask = raster.read_pgm(args.mask)
        rings = raster.mask_to_contours(mask, args.threshold)
        if not rings:
            raise ParseError(f"no contour found in {args.mask} at threshold {args.threshold}")
        return documents.PolygonDocument.single(rings), mask
    return documents.load_polygons(args.polygons), None


def _all_rings(doc: documents.PolygonDocument) -> list[Polygon]:
    return [ring for inst in doc.instances for ring in inst.rings]


# ── refine ─────────────────────────────────────────────────────────────

def cmd_refine(args) -> int:
    cfg = documents.load_evolution_config(args.config)
    doc, mask = _load_contours(args)
    print(f"🔄 Refining {len(doc.instances)} instance(s): lambda={cfg.lambda_}, M={cfg.max_steps}, "
          f"N={cfg.resolution}, n={cfg.iterations}")

    grid = None
    shared_field = None
    if args.field:
        shared_field = grid_field(raster.read_pgm(args.field))
    elif args.oracle:
        shared_field = documents.parse_oracle(args.oracle)
    else:
        if not args.features:
            raise ParseError("--ipc needs --features NPY")
        params, trained_box = documents.load_ipc_context(args.ipc)
        grid = documents.load_features(args.features)
        if trained_box is not None:
            print("   IPC coordinates use the instance box recorded at training time")

    refined, trace_steps = [], []
    for inst in doc.instances:
        field = shared_field or instance_field(grid, InstanceContext(trained_box or inst.box, params))
        traces = refine_shape(list(inst.rings), field, cfg)
        refined.append(documents.DocumentInstance(inst.id, tuple(t.final for t in traces)))
        trace_steps.append((inst.id, traces))
        frozen = np.mean([t.frozen_fraction() for t in traces])
        print(f"   • instance {inst.id}: {len(traces)} ring(s), {100 * frozen:.1f}% vertices frozen")

    out_doc = documents.PolygonDocument(refined)
    documents.save_polygons(out_doc, args.out)
    print(f"✅ Saved refined contours to {args.out}")

    if args.trace:
        trace_path = Path(args.out).with_suffix('.trace.json')
        documents.save_trace({inst_id: [[t.contours[k] for t in traces] for k in range(cfg.iterations + 1)]
                              for inst_id, traces in trace_steps}, trace_path)
        print(f"✅ Saved {cfg.iterations + 1} contour sets per instance to {trace_path}")

    gt_rings = _all_rings(documents.load_polygons(args.gt)) if args.gt else None
    if mask is not None:
        width, height = mask.width, mask.height
    elif grid is not None:
        width, height = grid.width, grid.height
    else:
        width, height = _canvas(_all_rings(doc) + _all_rings(out_doc) + (gt_rings or []))

    if gt_rings:
        iou = metrics.mask_iou(raster.rasterize(_all_rings(out_doc), width, height),
                               raster.rasterize(gt_rings, width, height))
        print(f"   Mask IoU vs ground truth: {iou:.4f}")

    if args.svg:
        iterations = [[ring for _, traces in trace_steps for ring in (t.contours[k] for t in traces)]
                      for k in range(1, cfg.iterations)]
        svg = documents.render_svg(width, height, initial=_all_rings(doc), iterations=iterations,
                                   final=_all_rings(out_doc), ground_truth=gt_rings)
        documents.save_svg(svg, args.svg)
        print(f"✅ Saved overlay to {args.svg}")
    return EXIT['ok']


# ── train ──────────────────────────────────────────────────────────────

def cmd_train(args) -> int:
    overrides = {'seed': args.seed}
    if args.epochs is not None:
        overrides['epochs'] = args.epochs
    cfg = ipc_training.TrainConfig(**overrides)

    doc, mask = _load_contours(args)
    inst = doc.instance(args.instance) if args.instance is not None else doc.instances[0]
    gt = list(inst.rings)

    if args.features:
        grid = documents.load_features(args.features)
    else:
        if mask is not None:
            labels = mask.binary().astype(int)
        else:
            width, height = _canvas(_all_rings(doc), pad=8)
            labels = np.zeros((height, width), dtype=int)
            for k, other in enumerate(doc.instances, start=1):
                labels[raster.rasterize(list(other.rings), width, height).binary()] = k
        grid = synthetic_feature_grid(labels, seed=args.seed)
        print(f"   Synthesized {grid.channels}-channel features ({grid.width}x{grid.height})")

    rng = np.random.default_rng(args.seed)
    samples = ipc_training.sample_boundary_points(gt, grid, cfg, rng, box=inst.box)
    train, holdout = ipc_training.split_samples(samples, cfg)
    print(f"🔄 Training IPC on {len(train)} band points ({len(holdout)} held out), {cfg.epochs} epochs")
    result = ipc_training.train_instance(ipc_training.init_params(rng=rng), train, cfg, holdout)

    documents.save_params(result.params, args.out, box=inst.box)
    print(f"✅ Saved IPC params to {args.out}")
    print(f"   Train accuracy: {result.train_accuracy:.4f}   Held-out accuracy: {result.holdout_accuracy:.4f}")
    if args.log:
        write_csv(result.log, args.log)
        print(f"✅ Saved training log to {args.log}")
    if args.features_out:
        documents.save_features(grid, args.features_out)
        print(f"✅ Saved feature grid to {args.features_out}")
    return EXIT['ok']


# ── bench ──────────────────────────────────────────────────────────────

def cmd_bench(args) -> int:
    base = documents.load_evolution_config(args.config)
    sweep = {}
    if args.sweep_config:
        sweep.update(harness.load_sweep_config(Path(args.sweep_config).read_text()))
    sweep.update(harness.parse_sweep(args.sweep or []))
    configs = harness.sweep_grid(base, sweep)

    corpus = harness.load_suite(args.suite, args.seed)
    print(f"🔄 Benchmark: suite '{args.suite}' ({len(corpus)} shapes) x {len(configs)} config(s)")
    result = harness.run_sweep(corpus, configs, workers=args.workers,
                               field_factory=harness.oracle_factory(args.oracle_tau))

    write_csv(result.report, args.out)
    print(f"✅ Saved {len(result.report)} rows to {args.out}")
    if args.timings:
        write_csv(result.timings, args.timings)
        print(f"✅ Saved timings to {args.timings}")

    summary = harness.summarize_sweep(result.report)
    print(f"\n{'='*60}")
    print(summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"{'='*60}")
    return EXIT['ok']


# ── eval ───────────────────────────────────────────────────────────────

def cmd_eval(args) -> int:
    pred = documents.load_polygons(args.pred)
    gt = documents.load_polygons(args.gt)
    config_hash = documents.load_evolution_config(args.config).config_hash()
    width, height = _canvas(_all_rings(pred) + _all_rings(gt))

    rows = []
    for gt_inst in gt.instances:
        pred_inst = pred.instance(gt_inst.id)
        report = metrics.evaluate_instance(list(pred_inst.rings), list(gt_inst.rings), width, height,
                                           instance=gt_inst.id, method=args.method, config_hash=config_hash)
        rows.append(report.to_row())
    frame = pd.DataFrame(rows)
    write_csv(frame, args.out)
    print(f"✅ Saved metrics for {len(rows)} instance(s) to {args.out}")
    print(f"   Mean mask IoU: {frame['mask_iou'].mean():.4f}   "
          f"Mean boundary IoU: {frame['boundary_iou'].mean():.4f}")
    return EXIT['ok']


# ── convert / render ───────────────────────────────────────────────────

def cmd_convert(args) -> int:
    if args.mask:
        mask = raster.read_pgm(args.mask)
        rings = raster.mask_to_contours(mask, args.threshold)
        documents.save_polygons(documents.PolygonDocument.single(rings), args.out)
        print(f"✅ Extracted {len(rings)} ring(s) from {args.mask} to {args.out}")
        return EXIT['ok']

    if args.width is None or args.height is None:
        raise ParseError("--polygons conversion needs --width and --height")
    doc = documents.load_polygons(args.polygons)
    values = np.zeros((args.height, args.width))
    for inst in doc.instances:
        values = np.maximum(values, raster.rasterize(list(inst.rings), args.width, args.height).values)
    raster.write_pgm(raster.MaskGrid(values), args.out, plain=args.plain)
    print(f"✅ Rasterized {len(doc.instances)} instance(s) to {args.out}")
    return EXIT['ok']


def cmd_render(args) -> int:
    doc = documents.load_polygons(args.polygons)
    gt_rings = _all_rings(documents.load_polygons(args.gt)) if args.gt else None
    if args.width and args.height:
        width, height = args.width, args.height
    else:
        width, height = _canvas(_all_rings(doc) + (gt_rings or []))
    documents.save_svg(documents.render_svg(width, height, final=_all_rings(doc), ground_truth=gt_rings), args.out)
    print(f"✅ Rendered {len(doc.instances)} instance(s) to {args.out}")
    return EXIT['ok']


# ── parser ─────────────────────────────────────────────────────────────

def _contour_source(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument('--mask', help='Coarse mask as PGM (P2 or P5)')
    group.add_argument('--polygons', help='Contours as a PolygonDocument JSON')
    parser.add_argument('--threshold', type=float, default=0.5,
                        help='Iso-level for mask contour extraction (default: 0.5)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='sharpcontour',
                                     description='Contour refinement by per-vertex flipping-point search')
    parser.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    refine = sub.add_parser('refine', help='Refine coarse contours against a probability field')
    _contour_source(refine)
    fields_group = refine.add_mutually_exclusive_group(required=True)
    fields_group.add_argument('--field', help='Probability raster as PGM')
    fields_group.add_argument('--oracle', help="Analytic oracle: 'circle:cx,cy,r[,tau]' or 'poly:FILE[,tau]'")
    fields_group.add_argument('--ipc', help='IPC params JSON (needs --features)')
    refine.add_argument('--features', help='Feature grid .npy, shape (H, W, F)')
    refine.add_argument('--config', help='EvolutionConfig JSON (default: built-in defaults)')
    refine.add_argument('--out', required=True, help='Refined PolygonDocument JSON')
    refine.add_argument('--svg', help='Layered SVG overlay')
    refine.add_argument('--gt', help='Ground-truth PolygonDocument (SVG layer and IoU report)')
    refine.add_argument('--trace', action='store_true', help='Also write every C^(k) to <out>.trace.json')
    refine.set_defaults(handler=cmd_refine)

    train = sub.add_parser('train', help='Fit IPC params for one instance')
    _contour_source(train)
    train.add_argument('--features', help='Feature grid .npy (default: synthesized from the ground truth)')
    train.add_argument('--instance', help='Instance id in the polygon document (default: first)')
    train.add_argument('--out', required=True, help='IPC params JSON')
    train.add_argument('--log', help='Training log CSV')
    train.add_argument('--features-out', help='Write the feature grid used for training (.npy)')
    train.add_argument('--seed', type=int, default=settings.TRAIN_DEFAULTS['seed'], help='RNG seed')
    train.add_argument('--epochs', type=int, default=None, help='Epoch count override')
    train.set_defaults(handler=cmd_train)

    bench = sub.add_parser('bench', help='Run a parameter sweep on a synthetic corpus')
    bench.add_argument('--suite', choices=sorted(harness.SUITES), default='standard', help='Corpus')
    bench.add_argument('--sweep', action='append', help='KEY=V1,V2 (repeatable)')
    bench.add_argument('--sweep-config', help='Sweep JSON: {"key": [values, ...]}')
    bench.add_argument('--config', help='Base EvolutionConfig JSON')
    bench.add_argument('--out', required=True, help='Metrics report CSV')
    bench.add_argument('--timings', help='Wall-clock timings CSV')
    bench.add_argument('--seed', type=int, default=settings.CORPUS['master_seed'], help='Corpus seed')
    bench.add_argument('--workers', type=int, default=settings.WORKERS, help='Worker threads')
    bench.add_argument('--oracle-tau', type=float, default=0.0,
                       help='Oracle sharpness in px (default: 0, the hard indicator)')
    bench.set_defaults(handler=cmd_bench)

    evaluate = sub.add_parser('eval', help='Metrics for predicted vs ground-truth contours')
    evaluate.add_argument('--pred', required=True, help='Predicted PolygonDocument')
    evaluate.add_argument('--gt', required=True, help='Ground-truth PolygonDocument')
    evaluate.add_argument('--out', required=True, help='Metrics CSV')
    evaluate.add_argument('--method', default='sharpcontour', help='Method label for the report')
    evaluate.add_argument('--config', help='EvolutionConfig JSON whose hash labels the rows')
    evaluate.set_defaults(handler=cmd_eval)

    convert = sub.add_parser('convert', help='Mask <-> polygon conversion')
    _contour_source(convert)
    convert.add_argument('--out', required=True, help='Output JSON (from --mask) or PGM (from --polygons)')
    convert.add_argument('--width', type=int, help='Raster width (polygons -> PGM)')
    convert.add_argument('--height', type=int, help='Raster height (polygons -> PGM)')
    convert.add_argument('--plain', action='store_true', help='Write plain (P2) PGM')
    convert.set_defaults(handler=cmd_convert)

    render = sub.add_parser('render', help='Render contours to SVG')
    render.add_argument('--polygons', required=True, help='PolygonDocument to render')
    render.add_argument('--gt', help='Ground-truth PolygonDocument')
    render.add_argument('--out', required=True, help='SVG path')
    render.add_argument('--width', type=int, help='Canvas width (default: fit contours)')
    render.add_argument('--height', type=int, help='Canvas height (default: fit contours)')
    render.set_defaults(handler=cmd_render)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT['parse']

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)
    try:
        return args.handler(args)
    except ParseError as exc:
        print(f"❌ Parse error: {exc}", file=sys.stderr)
        return EXIT['parse']
    except ConfigError as exc:
        print(f"❌ Config error: {exc}", file=sys.stderr)
        return EXIT['config']
    except SharpContourError as exc:
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT['runtime']
    except OSError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT['parse']


if __name__ == '__main__':
    sys.exit(main())
