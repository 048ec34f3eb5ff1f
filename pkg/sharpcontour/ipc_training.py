"""
Desk-scale training of the instance-aware point classifier (IPC).

Pipeline:
1. Sample points in a band around the ground-truth boundary (label 1 = outside)
2. Weight the focal loss with a per-batch dynamic alpha
3. Backpropagate through the MLP by hand (numpy only)
4. Fit theta per instance with momentum gradient descent and step halving,
   or fit a small hypernetwork (controller head) that predicts theta from an
   instance embedding
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.metrics import accuracy_score
from sklearn.model_selection import train_test_split

from config import settings
from sharpcontour import geometry
from sharpcontour.errors import ConfigError, FieldError, TrainingError
from sharpcontour.fields import (
    FeatureGrid,
    IpcParams,
    ipc_dims,
    mlp_forward,
    param_count,
    relative_coords,
)
from sharpcontour.geometry import BBox, Point2, ShapeLike

logger = logging.getLogger(__name__)

_T = settings.TRAIN_DEFAULTS

ALPHA_MODES = ('negative_fraction', 'positive_fraction')

# Accepted epochs may raise the loss by at most this much
LOSS_TOLERANCE = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = _T['gamma']
    band_scale: float = _T['band_scale']
    band_width: Optional[float] = _T['band_width']
    samples_per_instance: int = _T['samples_per_instance']
    learning_rate: float = _T['learning_rate']
    momentum: float = _T['momentum']
    epochs: int = _T['epochs']
    batch_size: int = _T['batch_size']
    prob_clamp: float = _T['prob_clamp']
    alpha_mode: str = _T['alpha_mode']
    holdout_fraction: float = _T['holdout_fraction']
    seed: int = _T['seed']

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if not 0 < self.prob_clamp < 0.5:
            raise ConfigError("prob_clamp must lie in (0, 0.5)")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.band_width is not None and not self.band_width > 0:
            raise ConfigError("band_width must be > 0")
        if not self.band_scale > 0:
            raise ConfigError("band_scale must be > 0")
        if self.samples_per_instance < 4 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("samples_per_instance >= 4, batch_size >= 1 and epochs >= 0 are required")
        if not self.learning_rate > 0 or not 0 <= self.momentum < 1:
            raise ConfigError("learning_rate must be > 0 and momentum in [0, 1)")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown training config field(s): {', '.join(unknown)}")
        return cls(**data)

    def with_overrides(self, **overrides) -> TrainConfig:
        return replace(self, **overrides)


# ── Samples ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TrainingSample:
    point: Point2
    feature: np.ndarray
    coords: np.ndarray
    label: int
    instance_id: int


@dataclass(frozen=True)
class SampleSet:
    """Column-wise storage of TrainingSamples."""

    points: np.ndarray
    features: np.ndarray
    coords: np.ndarray
    labels: np.ndarray
    instance_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> TrainingSample:
        return TrainingSample(Point2(float(self.points[i, 0]), float(self.points[i, 1])),
                              self.features[i], self.coords[i], int(self.labels[i]), int(self.instance_ids[i]))

    @property
    def inputs(self) -> np.ndarray:
        return np.hstack([self.features, self.coords])

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.labels == 1))

    @property
    def n_negative(self) -> int:
        return int(np.count_nonzero(self.labels == 0))

    def subset(self, idx) -> SampleSet:
        return SampleSet(self.points[idx], self.features[idx], self.coords[idx],
                         self.labels[idx], self.instance_ids[idx])

    @classmethod
    def concat(cls, sets: Sequence[SampleSet]) -> SampleSet:
        return cls(*(np.concatenate([getattr(s, name) for s in sets])
                     for name in ('points', 'features', 'coords', 'labels', 'instance_ids')))


def band_half_width(area: float, cfg: TrainConfig) -> float:
    if cfg.band_width is not None:
        return float(cfg.band_width)
    return cfg.band_scale * float(np.sqrt(area))


def sample_boundary_points(gt: ShapeLike, grid: FeatureGrid, cfg: TrainConfig, rng: np.random.Generator,
                           box: Optional[BBox] = None, instance_id: int = 0) -> SampleSet:
    """
    Uniform rejection sampling inside {q : |sd(gt, q)| <= band}.

    Labels come from the sign of the signed distance (1 = outside). Points
    sitting on the boundary itself are rejected and redrawn. Coordinates are
    relative to `box` (defaults to the ground-truth box).
    """
    rings = geometry.as_rings(gt)
    gt_box = geometry.bbox(rings)
    band = band_half_width(gt_box.area, cfg)
    box = box or gt_box
    low = np.array([gt_box.min.x - band, gt_box.min.y - band])
    high = np.array([gt_box.max.x + band, gt_box.max.y + band])

    need = cfg.samples_per_instance
    points, distances = [], []
    found = proposals = 0
    while found < need:
        candidates = rng.uniform(low, high, size=(1024, 2))
        sd = geometry.signed_distances(rings, candidates)
        ok = (np.abs(sd) <= band) & (np.abs(sd) >= 1e-9)
        proposals += len(candidates)
        points.append(candidates[ok])
        distances.append(sd[ok])
        found += int(ok.sum())
        if found == 0 and proposals >= settings.SAMPLING_MAX_TRIES:
            raise TrainingError(f"no point found within a {band:.3g} px band after {proposals} tries")

    pts = np.concatenate(points)[:need]
    sd = np.concatenate(distances)[:need]
    labels = (sd > 0).astype(int)
    return SampleSet(
        points=pts,
        features=grid.sample(pts),
        coords=relative_coords(pts, box),
        labels=labels,
        instance_ids=np.full(need, instance_id, dtype=int),
    )


def split_samples(samples: SampleSet, cfg: TrainConfig) -> tuple[SampleSet, SampleSet]:
    """Stratified train / held-out split."""
    train_idx, holdout_idx = train_test_split(
        np.arange(len(samples)), test_size=cfg.holdout_fraction,
        random_state=cfg.seed, stratify=samples.labels,
    )
    return samples.subset(np.sort(train_idx)), samples.subset(np.sort(holdout_idx))


# ── Loss ───────────────────────────────────────────────────────────────

def dynamic_alpha(batch: Union[SampleSet, np.ndarray], mode: str = 'negative_fraction') -> float:
    """alpha = n_neg / (n_pos + n_neg) (or the positive fraction with the other reading)."""
    labels = batch.labels if isinstance(batch, SampleSet) else np.asarray(batch)
    if len(labels) == 0:
        raise TrainingError("dynamic alpha of an empty batch")
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        logger.warning("Single-class batch (%d positive, %d negative): one focal term is fully de-weighted",
                       n_pos, n_neg)
    fraction = n_neg / len(labels)
    return fraction if mode == 'negative_fraction' else 1.0 - fraction


def focal_loss_terms(y_hat, y, alpha: float, gamma: float, eps: float = _T['prob_clamp']) -> np.ndarray:
    p = np.clip(np.asarray(y_hat, dtype=float), eps, 1.0 - eps)
    y = np.asarray(y)
    positive = -alpha * (1.0 - p) ** gamma * np.log(p)
    negative = -(1.0 - alpha) * p ** gamma * np.log1p(-p)
    return np.where(y == 1, positive, negative)


def focal_loss(y_hat: float, y: int, alpha: float, gamma: float, eps: float = _T['prob_clamp']) -> float:
    """
    Dynamic-alpha focal loss for one prediction.

    y = 1: -alpha (1 - y_hat)^gamma log(y_hat)
    y = 0: -(1 - alpha) y_hat^gamma log(1 - y_hat)
    """
    return float(focal_loss_terms(y_hat, y, alpha, gamma, eps))


def _focal_logit_grad(z: np.ndarray, y: np.ndarray, alpha: float, gamma: float, eps: float) -> np.ndarray:
    p = expit(z)
    positive = alpha * (gamma * (1.0 - p) ** gamma * p * np.log(p) - (1.0 - p) ** (gamma + 1.0))
    negative = (1.0 - alpha) * (p ** (gamma + 1.0) - gamma * p ** gamma * (1.0 - p) * np.log1p(-p))
    grad = np.where(y == 1, positive, negative)
    # the clamp has zero slope outside [eps, 1 - eps]
    return np.where((p > eps) & (p < 1.0 - eps), grad, 0.0)


def mlp_backward(weights: Sequence[np.ndarray], layer_inputs: Sequence[np.ndarray],
                 pre_activations: Sequence[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
    """Backpropagate d(loss)/d(output) (k, out) to a flat gradient in IpcParams.flatten() order."""
    delta = grad_out
    grads = []
    for i in reversed(range(len(weights))):
        grads.append((delta.T @ layer_inputs[i], delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ weights[i]) * (pre_activations[i - 1] > 0)
    grads.reverse()
    return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])


def _loss_and_grad(params: IpcParams, inputs: np.ndarray, labels: np.ndarray, alpha: float,
                   gamma: float, eps: float, with_grad: bool = True):
    logits, layer_inputs, pre = mlp_forward(params.weights, params.biases, inputs, return_cache=True)
    z = logits[:, 0]
    loss = float(np.mean(focal_loss_terms(expit(z), labels, alpha, gamma, eps)))
    if not with_grad:
        return loss, None
    grad_z = _focal_logit_grad(z, labels, alpha, gamma, eps) / len(labels)
    return loss, mlp_backward(params.weights, layer_inputs, pre, grad_z[:, None])


def batch_loss(params: IpcParams, batch: SampleSet, alpha: float, gamma: float,
               eps: float = _T['prob_clamp']) -> float:
    """Mean focal loss over the batch."""
    return _loss_and_grad(params, batch.inputs, batch.labels, alpha, gamma, eps, with_grad=False)[0]


def loss_gradient(params: IpcParams, batch: SampleSet, alpha: float, gamma: float,
                  eps: float = _T['prob_clamp']) -> np.ndarray:
    """Gradient of the mean focal loss over theta, flattened like IpcParams.flatten()."""
    if batch.features.shape[1] + 2 != params.dims[0]:
        raise TrainingError(f"batch has {batch.features.shape[1]} features, params take {params.dims[0] - 2}")
    return _loss_and_grad(params, batch.inputs, batch.labels, alpha, gamma, eps)[1]


# ── Optimizer ──────────────────────────────────────────────────────────

def he_init(dims: Sequence[int], rng: np.random.Generator) -> tuple[list[np.ndarray], list[np.ndarray]]:
    weights = [rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)) for n_in, n_out in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(n_out) for n_out in dims[1:]]
    return weights, biases


def init_params(dims: Optional[Sequence[int]] = None, rng: Optional[np.random.Generator] = None) -> IpcParams:
    dims = list(dims) if dims is not None else ipc_dims()
    rng = rng if rng is not None else np.random.default_rng(0)
    weights, biases = he_init(dims, rng)
    return IpcParams(tuple(weights), tuple(biases))


Objective = Callable[[np.ndarray, Optional[np.ndarray]], tuple[float, Optional[np.ndarray]]]


def descend(objective: Objective, x0: np.ndarray, n_items: int, cfg: TrainConfig,
            monitor: Optional[Callable[[np.ndarray], dict]] = None) -> tuple[np.ndarray, pd.DataFrame]:
    """
    Mini-batch gradient descent with momentum and step halving.

    `objective(x, idx)` returns (loss, grad) on the items `idx`, or the full
    loss (grad may be None) when idx is None. An epoch whose full loss rises
    by more than LOSS_TOLERANCE is rolled back, the learning rate halved and
    the momentum reset, so accepted epochs never increase the loss.
    """
    rng = np.random.default_rng(cfg.seed)
    x = np.array(x0, dtype=float)
    velocity = np.zeros_like(x)
    lr = cfg.learning_rate
    loss = objective(x, None)[0]
    if not np.isfinite(loss):
        raise TrainingError("diverged")

    rows = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_items)
        x_try, v_try = x.copy(), velocity.copy()
        try:
            with np.errstate(over='ignore', invalid='ignore'):
                for lo in range(0, n_items, cfg.batch_size):
                    _, grad = objective(x_try, order[lo:lo + cfg.batch_size])
                    v_try = cfg.momentum * v_try - lr * grad
                    x_try = x_try + v_try
                trial = objective(x_try, None)[0]
        except FieldError as exc:
            # non-finite parameters
            raise TrainingError("diverged") from exc
        if not np.isfinite(trial):
            raise TrainingError("diverged")

        accepted = trial <= loss + LOSS_TOLERANCE
        if accepted:
            x, velocity, loss = x_try, v_try, trial
        else:
            lr *= 0.5
            velocity = np.zeros_like(x)

        row = {'epoch': epoch, 'loss': loss, 'learning_rate': lr, 'accepted': bool(accepted)}
        if monitor is not None:
            row.update(monitor(x))
        rows.append(row)
        logger.debug("epoch %d loss %.6f lr %.4g%s", epoch, loss, lr, '' if accepted else ' (rejected)')
    return x, pd.DataFrame(rows)


# ── Per-instance fitting ───────────────────────────────────────────────

@dataclass
class TrainResult:
    params: IpcParams
    log: pd.DataFrame
    train_accuracy: float
    holdout_accuracy: Optional[float] = None


def predict_labels(params: IpcParams, batch: SampleSet) -> np.ndarray:
    logits = mlp_forward(params.weights, params.biases, batch.inputs)[:, 0]
    return (expit(logits) > 0.5).astype(int)


def band_accuracy(params: IpcParams, batch: SampleSet) -> float:
    return float(accuracy_score(batch.labels, predict_labels(params, batch)))


def _require_both_labels(samples: SampleSet) -> None:
    if samples.n_positive < 2 or samples.n_negative < 2:
        raise TrainingError(f"need >= 2 samples of each label, got {samples.n_positive} outside "
                            f"and {samples.n_negative} inside")


def train_instance(params0: IpcParams, samples: SampleSet, cfg: TrainConfig,
                   holdout: Optional[SampleSet] = None) -> TrainResult:
    """Fit theta directly on one instance's band samples; returns the params and the training log."""
    _require_both_labels(samples)
    dims = params0.dims
    inputs = samples.inputs
    labels = samples.labels
    full_alpha = dynamic_alpha(labels, cfg.alpha_mode)

    def objective(x, idx):
        params = IpcParams.from_flat(x, dims)
        if idx is None:
            return _loss_and_grad(params, inputs, labels, full_alpha, cfg.gamma, cfg.prob_clamp, with_grad=False)
        alpha = dynamic_alpha(labels[idx], cfg.alpha_mode)
        return _loss_and_grad(params, inputs[idx], labels[idx], alpha, cfg.gamma, cfg.prob_clamp)

    def monitor(x):
        return {'accuracy': band_accuracy(IpcParams.from_flat(x, dims), samples), 'alpha': full_alpha}

    x, log = descend(objective, params0.flatten(), len(samples), cfg, monitor)
    params = IpcParams.from_flat(x, dims)
    result = TrainResult(params, log, band_accuracy(params, samples),
                         band_accuracy(params, holdout) if holdout is not None else None)
    logger.info("IPC fit: train accuracy %.4f%s", result.train_accuracy,
                '' if holdout is None else f", held-out accuracy {result.holdout_accuracy:.4f}")
    return result


def fit_instance(params0: IpcParams, samples: SampleSet, cfg: TrainConfig) -> IpcParams:
    return train_instance(params0, samples, cfg).params


# ── Controller head (hypernetwork) ─────────────────────────────────────

@dataclass(frozen=True)
class Hypernetwork:
    """Three fully connected layers: embedding (E) -> hidden -> hidden -> |theta|."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    target_dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.weights) != 3:
            raise TrainingError("the controller head has exactly three layers")
        if self.weights[-1].shape[0] != param_count(self.target_dims):
            raise TrainingError(f"head emits {self.weights[-1].shape[0]} values, "
                                f"IPC needs {param_count(self.target_dims)}")

    @property
    def embedding_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.embedding_dim] + [w.shape[0] for w in self.weights]

    def flatten(self) -> np.ndarray:
        return IpcParams(self.weights, self.biases).flatten()

    @classmethod
    def from_flat(cls, vector: np.ndarray, dims: Sequence[int], target_dims: Sequence[int]) -> Hypernetwork:
        layers = IpcParams.from_flat(vector, dims)
        return cls(layers.weights, layers.biases, tuple(target_dims))

    @classmethod
    def zeros(cls, target_dims: Sequence[int], embedding_dim: int = settings.HYPERNET_DIMS['embedding'],
              hidden: int = settings.HYPERNET_DIMS['hidden']) -> Hypernetwork:
        dims = [embedding_dim, hidden, hidden, param_count(target_dims)]
        return cls.from_flat(np.zeros(param_count(dims)), dims, target_dims)


def init_hypernetwork(target_dims: Optional[Sequence[int]] = None,
                      embedding_dim: int = settings.HYPERNET_DIMS['embedding'],
                      hidden: int = settings.HYPERNET_DIMS['hidden'],
                      rng: Optional[np.random.Generator] = None,
                      output_scale: float = 0.01) -> Hypernetwork:
    """He-initialized head whose output bias is itself a He-initialized theta."""
    target_dims = tuple(target_dims) if target_dims is not None else tuple(ipc_dims())
    rng = rng if rng is not None else np.random.default_rng(0)
    weights, biases = he_init([embedding_dim, hidden, hidden], rng)
    weights.append(rng.normal(0.0, output_scale / np.sqrt(hidden), size=(param_count(target_dims), hidden)))
    biases.append(init_params(target_dims, rng).flatten())
    return Hypernetwork(tuple(weights), tuple(biases), target_dims)


def hypernet_forward(h: Hypernetwork, embedding: Sequence[float]) -> IpcParams:
    embedding = np.asarray(embedding, dtype=float)
    if embedding.shape != (h.embedding_dim,):
        raise TrainingError(f"embedding has shape {embedding.shape}, head expects ({h.embedding_dim},)")
    theta = mlp_forward(h.weights, h.biases, embedding[None, :])[0]
    return IpcParams.from_flat(theta, h.target_dims)


def instance_embedding(grid: FeatureGrid, box: BBox) -> np.ndarray:
    return grid.pooled_embedding(box)


@dataclass
class HypernetResult:
    hypernet: Hypernetwork
    log: pd.DataFrame


def train_hypernetwork(h: Hypernetwork, instances: Sequence[tuple[np.ndarray, SampleSet]],
                       cfg: TrainConfig) -> HypernetResult:
    """Fit the controller head jointly on several instances' band samples."""
    if not instances:
        raise TrainingError("no instances to train the controller head on")
    for _, samples in instances:
        _require_both_labels(samples)

    dims = h.dims
    target_dims = h.target_dims
    embeddings = np.stack([np.asarray(e, dtype=float) for e, _ in instances])
    owner = np.concatenate([np.full(len(s), k) for k, (_, s) in enumerate(instances)])
    inputs = np.concatenate([s.inputs for _, s in instances])
    labels = np.concatenate([s.labels for _, s in instances])
    n_total = len(labels)

    def objective(x, idx):
        head = Hypernetwork.from_flat(x, dims, target_dims)
        thetas, layer_inputs, pre = mlp_forward(head.weights, head.biases, embeddings, return_cache=True)
        chosen = np.arange(n_total) if idx is None else np.asarray(idx)
        loss = 0.0
        grad_theta = np.zeros_like(thetas)
        for k in range(len(instances)):
            members = chosen[owner[chosen] == k]
            if len(members) == 0:
                continue
            weight = len(members) / len(chosen)
            params = IpcParams.from_flat(thetas[k], target_dims)
            alpha = dynamic_alpha(labels[members], cfg.alpha_mode)
            part, grad = _loss_and_grad(params, inputs[members], labels[members], alpha,
                                        cfg.gamma, cfg.prob_clamp, with_grad=idx is not None)
            loss += weight * part
            if grad is not None:
                grad_theta[k] = weight * grad
        if idx is None:
            return loss, None
        return loss, mlp_backward(head.weights, layer_inputs, pre, grad_theta)

    x, log = descend(objective, h.flatten(), n_total, cfg)
    trained = Hypernetwork.from_flat(x, dims, target_dims)
    logger.info("Controller head fit on %d instances, final loss %.6f", len(instances),
                log['loss'].iloc[-1] if len(log) else float('nan'))
    return HypernetResult(trained, log)
