"""
Single benchmark experiments that are not plain parameter sweeps.

Usage:
    python scripts/run_experiment.py tolerance --out artifacts/tolerance.csv
    python scripts/run_experiment.py baselines --out artifacts/baselines.csv
    python scripts/run_experiment.py instance  --out artifacts/instance_awareness.csv

Experiments:
- tolerance: iterations needed to reach a 0.5 px mean error, for M = 5 and M = 10, from the
             TOLERANCE_PERTURBATION start
- baselines: IPC-driven evolution vs Reg1 / Reg2 on the star corpus with smoothed inputs,
             every model trained with the BASELINE_TRAIN schedule
- instance:  per-instance classifiers (direct fit and controller head) on occlusion scenes
"""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from config import settings  # noqa: E402
from sharpcontour import harness  # noqa: E402
from sharpcontour.evolution import EvolutionConfig  # noqa: E402
from sharpcontour.files import write_csv  # noqa: E402

# Fix Windows terminal encoding for emoji/Unicode
if sys.platform == 'win32':
    sys.stdout.reconfigure(encoding='utf-8', errors='replace')

# Smoothed coarse contours for the corner-recovery comparison
BASELINE_PERTURBATION = [harness.PerturbSpec(harness.PerturbMode.LAPLACIAN_SMOOTH, 5)]


def run_tolerance(args) -> pd.DataFrame:
    corpus = harness.load_suite(args.suite, args.seed)
    rows = []
    for max_steps in (5, 10):
        needed = harness.iterations_to_tolerance(corpus, EvolutionConfig(max_steps=max_steps),
                                                perturbation=harness.tolerance_perturbation())
        print(f"   M={max_steps}: {needed if needed is not None else 'not reached'} iteration(s)")
        rows.append({'max_steps': max_steps, 'iterations_needed': needed if needed is not None else -1})
    return pd.DataFrame(rows)


def run_baselines(args) -> pd.DataFrame:
    corpus = harness.star_corpus(args.seed)
    if args.suite == 'small':
        corpus = corpus[:3]
    frame = harness.compare_with_baselines(corpus, BASELINE_PERTURBATION, seed=args.seed)
    summary = frame.groupby('method', sort=False)['corner_error_mean'].mean()
    for method, value in summary.items():
        print(f"   {method:>13}: mean corner error {value:.3f} px")
    return frame


def run_instance(args) -> pd.DataFrame:
    frames = []
    for seed in range(args.scenes):
        scene = harness.overlap_scene(seed)
        for use_head in (False, True):
            frame = harness.instance_awareness(scene, use_hypernetwork=use_head, seed=seed)
            frames.append(frame.assign(scene=seed))
    frame = pd.concat(frames, ignore_index=True)
    print(frame.groupby('mode')[['holdout_accuracy', 'overlap_disagreement']].mean().to_string())
    return frame


EXPERIMENTS = {
    'tolerance': run_tolerance,
    'baselines': run_baselines,
    'instance': run_instance,
}


def main():
    parser = argparse.ArgumentParser(description='Run one SharpContour benchmark experiment')
    parser.add_argument('experiment', choices=sorted(EXPERIMENTS))
    parser.add_argument('--out', '-o', required=True, help='Output CSV')
    parser.add_argument('--suite', choices=sorted(harness.SUITES), default='standard', help='Corpus')
    parser.add_argument('--seed', type=int, default=settings.CORPUS['master_seed'], help='Corpus seed')
    parser.add_argument('--scenes', type=int, default=3, help='Occlusion scenes (instance experiment)')
    parser.add_argument('--verbose', '-v', action='store_true')
    args = parser.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(levelname)s %(name)s: %(message)s')

    print(f"🔄 Running experiment '{args.experiment}'")
    frame = EXPERIMENTS[args.experiment](args)
    write_csv(frame, args.out)
    print(f"✅ Saved {len(frame)} rows to {args.out}")


if __name__ == '__main__':
    main()
