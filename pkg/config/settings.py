"""
Centralized configuration for SharpContour.

All constants, defaults, and thresholds in one place.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

PROJECT_ROOT = Path(__file__).parent.parent

# Optional local overrides (worker count, artifacts dir). Seeds never come from here.
load_dotenv(PROJECT_ROOT / '.env.local')

# Contour evolution defaults
EVOLUTION_DEFAULTS = {
    'lambda': 0.003,        # deformation ratio
    'max_steps': 10,        # M, march steps per vertex per iteration
    'resolution': 128,      # N, vertices per contour
    'iterations': 3,        # n, evolution passes
    'adaptive_step': True,
    'freeze_epsilon': 1e-4,  # px, steps shorter than this freeze the vertex
    'seed': 0,
    'midpoint_refine': False,
}

# Instance-aware point classifier shape
IPC_DIMS = {
    'features': 16,   # F, reduced channel count
    'hidden': 16,     # H, width of each of the three hidden layers
}

# Controller head (hypernetwork)
HYPERNET_DIMS = {
    'embedding': 32,  # E = mean + std pooled features
    'hidden': 64,
}

# IPC training defaults
TRAIN_DEFAULTS = {
    'gamma': 2.0,
    'band_scale': 0.05,          # band half-width = band_scale * sqrt(A)
    'band_width': None,          # px, overrides band_scale when set
    'samples_per_instance': 512,
    'learning_rate': 0.5,
    'momentum': 0.9,
    'epochs': 300,
    'batch_size': 128,
    'prob_clamp': 1e-7,
    'alpha_mode': 'negative_fraction',
    'holdout_fraction': 0.25,
    'seed': 0,
}

# Regression baselines train with the IPC schedule at a smaller rate (L1 targets are in px)
REGRESSION_LEARNING_RATE = 0.05

# Joint-loss weight of the host segmentation model; recorded only, nothing here trains L_s
JOINT_LOSS_WEIGHT = 10.0

# Synthetic feature grid blur scales (px)
FEATURE_BLUR_SIGMAS = (0.6, 2.0)

# Geometry tolerances
COINCIDENT_TOLERANCE = 1e-9
BOUNDARY_TOLERANCE = 1e-12
MIN_PERIMETER = 1e-6

# Marching-squares ring filters
MIN_RING_VERTICES = 8
MIN_RING_DIAGONAL = 4.0

# Rejection sampling budget for band points
SAMPLING_MAX_TRIES = 10_000

# Boundary IoU band: fraction of the image diagonal, floor 1 px
BOUNDARY_IOU_FRACTION = 0.02

# Dense sampling for Hausdorff distance
HAUSDORFF_SAMPLES = 1024

# Standard synthetic corpus
CORPUS = {
    'master_seed': 20220314,
    'counts': {
        'blob': 20,
        'star': 15,
        'rounded_rect': 10,
        'annulus': 5,
    },
    'scale_range': (100.0, 300.0),
    'canvas_margin': 0.25,     # canvas side = scale * (1 + 2 * margin)
    'min_vertices': 64,
    'max_reseeds': 10,
}

# Initial-contour perturbation used by the oracle convergence benchmark, applied in order
ACCEPTANCE_PERTURBATION = [
    {'mode': 'vertex_jitter', 'amount': 0.02},
    {'mode': 'laplacian_smooth', 'amount': 3},
]

# Coarser start for the iterations-to-tolerance comparison: the acceptance perturbation
# grown 4% about each ring centroid, about 13 default steps at every scale
TOLERANCE_PERTURBATION = ACCEPTANCE_PERTURBATION + [
    {'mode': 'radial_scale', 'amount': 0.04},
]

# Oracle softness for the adaptive-step ablation; a hard oracle makes both step modes identical
ABLATION_ORACLE_TAU = 1.0

# IPC training for the regression-baseline comparison (denser band samples, longer schedule)
BASELINE_TRAIN = {
    'samples_per_instance': 2048,
    'epochs': 400,
}

# Laplacian smoothing weight toward the neighbour average
LAPLACIAN_WEIGHT = 0.5

# Parameter sweep grids used by the bench suite
SWEEPS = {
    'lambda': [0.0015, 0.003, 0.006],
    'max_steps': [5, 10, 15, 20],
    'resolution': [128, 256, 348, 512],
    'iterations': [1, 2, 3, 4],
}

# SVG layer colours
SVG_COLORS = {
    'initial': '#9e9e9e',
    'iteration_start': '#90caf9',
    'iteration_end': '#0d47a1',
    'final': '#d32f2f',
    'ground_truth': '#2e7d32',
}

# CSV float formatting (fixed, so reruns are byte-identical)
CSV_FLOAT_FORMAT = '%.6f'

# CLI exit codes
EXIT_CODES = {
    'ok': 0,
    'parse': 2,
    'config': 3,
    'runtime': 4,
}

# Environment overrides
WORKERS = int(os.getenv('SHARPCONTOUR_WORKERS', '1'))
ARTIFACTS_DIR = Path(os.getenv('SHARPCONTOUR_ARTIFACTS', str(PROJECT_ROOT / 'artifacts')))
