"""
One-Command Benchmark Pipeline

Usage:
    python scripts/run_acceptance.py                  # full standard corpus
    python scripts/run_acceptance.py --quick          # small corpus (8 shapes)
    python scripts/run_acceptance.py --skip-baselines # skip the regression baseline training

This script orchestrates the benchmark steps, each a separate process:
1. Oracle convergence          →  artifacts/convergence.csv
2. Adaptive-step ablation      →  artifacts/adaptive_step.csv (soft oracle, ABLATION_ORACLE_TAU)
3. Iteration sweep (n = 1..4)  →  artifacts/iterations.csv
4. lambda / N / M sweeps       →  artifacts/sweep_*.csv (+ timings), grids from settings.SWEEPS
5. Iterations to tolerance     →  artifacts/tolerance.csv
6. Regression baselines        →  artifacts/baselines.csv
7. Instance awareness          →  artifacts/instance_awareness.csv

Then it reads the reports back and prints a pass/fail summary of the trends.
"""

import argparse
import subprocess
import sys
import time
from pathlib import Path

import pandas as pd

# Fix Windows terminal encoding for emoji/Unicode
if sys.platform == 'win32':
    sys.stdout.reconfigure(encoding='utf-8', errors='replace')

# Resolve paths relative to project root
PROJECT_ROOT = Path(__file__).parent.parent
SCRIPTS_DIR = PROJECT_ROOT / 'scripts'
sys.path.insert(0, str(PROJECT_ROOT))

from config import settings  # noqa: E402

ARTIFACTS_DIR = settings.ARTIFACTS_DIR


def run_step(name: str, cmd: list[str]) -> bool:
    """Run a pipeline step and return success/failure."""
    print(f"\n{'='*60}")
    print(f"  STEP: {name}")
    print(f"{'='*60}\n")

    start = time.time()
    result = subprocess.run(cmd, cwd=str(PROJECT_ROOT))
    elapsed = time.time() - start

    if result.returncode != 0:
        print(f"\n❌ FAILED: {name} (exit code {result.returncode})")
        return False

    print(f"\n✅ {name} completed in {elapsed:.1f}s")
    return True


def sweep_arg(key: str) -> str:
    """--sweep value for one of the grids in settings.SWEEPS."""
    return f"{key}=" + ','.join(str(v) for v in settings.SWEEPS[key])


def check(label: str, passed: bool, detail: str) -> bool:
    print(f"  {'✅' if passed else '❌'} {label}: {detail}")
    return passed


def summarize() -> bool:
    """Read the reports back and check the expected trends."""
    results = []

    conv = pd.read_csv(ARTIFACTS_DIR / 'convergence.csv')
    results.append(check('Oracle convergence',
                         conv['mean_distance'].mean() <= 0.5 and conv['frozen_fraction'].mean() >= 0.9,
                         f"mean distance {conv['mean_distance'].mean():.3f} px, "
                         f"{100 * conv['frozen_fraction'].mean():.1f}% frozen"))

    adaptive = pd.read_csv(ARTIFACTS_DIR / 'adaptive_step.csv').groupby('adaptive_step')['mean_distance'].mean()
    ratio = adaptive[False] / adaptive[True]
    results.append(check('Adaptive-step ablation', ratio >= 1.1, f"off / on = {ratio:.2f}"))

    iters = pd.read_csv(ARTIFACTS_DIR / 'iterations.csv').groupby('iterations')['mean_distance'].mean()
    steps = iters.diff().dropna()
    results.append(check('Iteration monotonicity',
                         bool((steps <= 1e-9).all()) and (iters[3] - iters[4]) < (iters[1] - iters[2]),
                         ' → '.join(f"{v:.3f}" for v in iters)))

    lam = pd.read_csv(ARTIFACTS_DIR / 'sweep_lambda.csv').groupby('lambda')['mean_distance'].mean()
    results.append(check('lambda sweep', lam[0.006] >= lam[0.003],
                         f"0.003 → {lam[0.003]:.3f}, 0.006 → {lam[0.006]:.3f}"))

    timings = pd.read_csv(ARTIFACTS_DIR / 'sweep_resolution_timings.csv').groupby('resolution')['runtime_ms'].sum()
    quality = pd.read_csv(ARTIFACTS_DIR / 'sweep_resolution.csv').groupby('resolution')['mean_distance'].mean()
    gain = (quality[128] - quality[512]) / quality[128] if quality[128] > 0 else 0.0
    results.append(check('N sweep', timings[512] > timings[128] and gain < 0.1,
                         f"runtime {timings[128]:.0f} → {timings[512]:.0f} ms, quality gain {100 * gain:.1f}%"))

    tol = pd.read_csv(ARTIFACTS_DIR / 'tolerance.csv').set_index('max_steps')['iterations_needed']
    reached = tol[10] > 0 and (tol[5] < 0 or tol[5] > tol[10])
    results.append(check('M=5 needs more iterations than M=10', reached, f"M=5: {tol[5]}, M=10: {tol[10]}"))

    baselines_path = ARTIFACTS_DIR / 'baselines.csv'
    if baselines_path.exists():
        corners = pd.read_csv(baselines_path).groupby('method')['corner_error_mean'].mean()
        ours = corners['sharpcontour']
        for variant in ('reg1', 'reg2'):
            margin = (corners[variant] - ours) / corners[variant]
            results.append(check(f"Corner error vs {variant}", margin >= 0.25,
                                 f"{ours:.3f} vs {corners[variant]:.3f} px ({100 * margin:.0f}% lower)"))

    inst = pd.read_csv(ARTIFACTS_DIR / 'instance_awareness.csv')
    for mode, group in inst.groupby('mode'):
        results.append(check(f"Instance awareness ({mode})",
                             group['holdout_accuracy'].min() >= 0.95 and group['overlap_disagreement'].min() >= 0.9,
                             f"min held-out accuracy {group['holdout_accuracy'].min():.3f}, "
                             f"min overlap disagreement {group['overlap_disagreement'].min():.3f}"))
    return all(results)


def main():
    parser = argparse.ArgumentParser(
        description='One-command benchmark: convergence → ablations → sweeps → baselines → instance awareness'
    )
    parser.add_argument('--quick', action='store_true', help='Use the small corpus (8 shapes)')
    parser.add_argument('--skip-baselines', action='store_true', help='Skip regression baseline training')
    parser.add_argument('--workers', '-w', type=int, default=settings.WORKERS, help='Worker threads per sweep')
    args = parser.parse_args()

    python = sys.executable
    cli = str(SCRIPTS_DIR / 'sharpcontour.py')
    experiment = str(SCRIPTS_DIR / 'run_experiment.py')
    suite = 'small' if args.quick else 'standard'
    total_start = time.time()
    ARTIFACTS_DIR.mkdir(parents=True, exist_ok=True)

    print(f"🔄 Starting benchmark pipeline")
    print(f"   Suite:  {suite}")
    print(f"   Output: {ARTIFACTS_DIR}/")

    def bench(name: str, out: str, *sweep: str, timings: bool = False, oracle_tau: float = 0.0) -> bool:
        cmd = [python, cli, 'bench', '--suite', suite, '--workers', str(args.workers),
               '--oracle-tau', str(oracle_tau), '--out', str(ARTIFACTS_DIR / f"{out}.csv")]
        for item in sweep:
            cmd += ['--sweep', item]
        if timings:
            cmd += ['--timings', str(ARTIFACTS_DIR / f"{out}_timings.csv")]
        return run_step(name, cmd)

    steps = [
        lambda: bench("Oracle Convergence", 'convergence', timings=True),
        lambda: bench("Adaptive-Step Ablation", 'adaptive_step', 'adaptive_step=true,false',
                      oracle_tau=settings.ABLATION_ORACLE_TAU),
        lambda: bench("Iteration Sweep", 'iterations', sweep_arg('iterations')),
        lambda: bench("lambda Sweep", 'sweep_lambda', sweep_arg('lambda')),
        lambda: bench("Resolution Sweep", 'sweep_resolution', sweep_arg('resolution'), timings=True),
        lambda: bench("Max-Steps Sweep", 'sweep_max_steps', sweep_arg('max_steps')),
        lambda: run_step("Iterations To Tolerance",
                         [python, experiment, 'tolerance', '--suite', suite,
                          '--out', str(ARTIFACTS_DIR / 'tolerance.csv')]),
        lambda: run_step("Instance Awareness",
                         [python, experiment, 'instance', '--out', str(ARTIFACTS_DIR / 'instance_awareness.csv')]),
    ]
    for step in steps:
        if not step():
            sys.exit(1)

    if args.skip_baselines:
        print(f"\n⏭️  Skipping regression baselines (--skip-baselines flag)")
    else:
        success = run_step("Regression Baselines",
                           [python, experiment, 'baselines', '--suite', suite,
                            '--out', str(ARTIFACTS_DIR / 'baselines.csv')])
        if not success:
            print("\n⚠️  Baseline comparison failed. The other reports are still updated.")

    total_elapsed = time.time() - total_start
    print(f"\n{'='*60}")
    print(f"  🎉 ACCEPTANCE COMPLETE: {total_elapsed:.1f}s total")
    print(f"{'='*60}\n")
    all_passed = summarize()
    print(f"\n  {'🎉 All trend checks passed' if all_passed else '⚠️  Some trend checks failed'}\n")
    sys.exit(0 if all_passed else 1)


if __name__ == '__main__':
    main()
