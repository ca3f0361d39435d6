"""Uncertainty-driven point refinement of coarse mask predictions.

A coarse probability map is repeatedly upsampled by two; at each resolution
the cells whose probability is closest to 0.5 are re-scored by a small MLP
that sees fine-grained features sampled at the cell plus the current
(interpolated) probability there.

All point coordinates are normalized ``(u, v)`` pairs in ``[0, 1]^2`` where
``u`` runs along columns and ``v`` along rows; ``u = 0`` is column 0 and
``u = 1`` is column ``width - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .losses import FocalLossParams, focal_binary, focal_binary_grad
from .masks import resize_prob

__all__ = [
    "FeatureGrid",
    "SubdivisionConfig",
    "PointHeadModel",
    "TrainingError",
    "bilinear_sample",
    "uncertain_indices",
    "uncertain_points",
    "cell_points",
    "point_head_forward",
    "subdivision_refine",
    "sample_training_points",
    "train_point_head",
]

_P_MIN = np.finfo(np.float64).tiny
_P_MAX = 1.0 - 2.0**-53


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class FeatureGrid:
    """Dense features of shape ``(channels, height, width)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"feature grid must be (C, H, W), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature grid contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class SubdivisionConfig:
    coarse_size: int = 7
    steps: int = 2
    points_per_step: int = 196
    threshold: float = 0.5

    def __post_init__(self):
        if self.coarse_size < 1 or self.steps < 1 or self.points_per_step < 1:
            raise ValueError("coarse_size, steps and points_per_step must be positive")

    @property
    def output_size(self) -> int:
        return self.coarse_size * 2**self.steps


def _axis_coord(t: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(t)
    x = t * (n - 1)
    # snap coordinates that land on a cell up to rounding noise
    r = np.rint(x)
    return np.where(np.abs(x - r) < 1e-9, r, x)


def bilinear_sample(grid: FeatureGrid, points) -> np.ndarray:
    """Sample every channel at each point; returns shape ``(P, C)``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x = _axis_coord(np.clip(pts[:, 0], 0.0, 1.0), grid.width)
    y = _axis_coord(np.clip(pts[:, 1], 0.0, 1.0), grid.height)
    x0 = np.minimum(np.floor(x).astype(np.intp), grid.width - 1)
    y0 = np.minimum(np.floor(y).astype(np.intp), grid.height - 1)
    x1 = np.minimum(x0 + 1, grid.width - 1)
    y1 = np.minimum(y0 + 1, grid.height - 1)
    tx = x - x0
    ty = y - y0
    v = grid.values
    top = v[:, y0, x0] + tx * (v[:, y0, x1] - v[:, y0, x0])
    bottom = v[:, y1, x0] + tx * (v[:, y1, x1] - v[:, y1, x0])
    return (top + ty * (bottom - top)).T


def uncertain_indices(probs, n: int) -> np.ndarray:
    """Row-major indices of the ``n`` cells with probability closest to 0.5."""
    if n < 1:
        raise ValueError("n must be positive")
    flat = np.asarray(probs, dtype=np.float64).ravel()
    order = np.argsort(np.abs(flat - 0.5), kind="stable")
    return order[: min(n, flat.size)]


def cell_points(indices, height: int, width: int) -> np.ndarray:
    indices = np.asarray(indices)
    rows, cols = np.divmod(indices, width)
    u = cols / (width - 1) if width > 1 else np.zeros(indices.shape)
    v = rows / (height - 1) if height > 1 else np.zeros(indices.shape)
    return np.stack([u, v], axis=-1).astype(np.float64)


def uncertain_points(probs, n: int) -> np.ndarray:
    probs = np.asarray(probs)
    idx = uncertain_indices(probs, n)
    return cell_points(idx, *probs.shape)


@dataclass
class PointHeadModel:
    """MLP point classifier: ReLU hidden layers, one output logit.

    Layer ``k`` maps activations by ``x @ weights[k] + biases[k]`` so weight
    matrices are stored ``(fan_in, fan_out)``.
    """

    in_dim: int
    hidden_widths: tuple[int, ...]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        self.hidden_widths = tuple(int(h) for h in self.hidden_widths)
        dims = (self.in_dim, *self.hidden_widths, 1)
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("layer count does not match hidden_widths")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise ValueError(f"layer {k} has shape {w.shape}/{b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k} has non-finite parameters")

    @classmethod
    def initialize(cls, in_dim: int, hidden_widths=(64, 64, 64), seed=0) -> "PointHeadModel":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        dims = (in_dim, *hidden_widths, 1)
        weights = [
            rng.normal(0.0, np.sqrt(2.0 / dims[k]), size=(dims[k], dims[k + 1]))
            for k in range(len(dims) - 1)
        ]
        biases = [np.zeros(dims[k + 1]) for k in range(len(dims) - 1)]
        return cls(in_dim, tuple(hidden_widths), weights, biases)

    @classmethod
    def zeros(cls, in_dim: int, hidden_widths=(64, 64, 64)) -> "PointHeadModel":
        dims = (in_dim, *hidden_widths, 1)
        weights = [np.zeros((dims[k], dims[k + 1])) for k in range(len(dims) - 1)]
        biases = [np.zeros(dims[k + 1]) for k in range(len(dims) - 1)]
        return cls(in_dim, tuple(hidden_widths), weights, biases)

    @property
    def feature_channels(self) -> int:
        return self.in_dim - 1

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "PointHeadModel":
        return PointHeadModel(
            self.in_dim,
            self.hidden_widths,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def inputs(self, features, coarse_probs) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[None, :]
        coarse = np.asarray(coarse_probs, dtype=np.float64).reshape(-1, 1)
        if feats.shape[1] != self.feature_channels:
            raise ValueError(
                f"expected {self.feature_channels} feature channels, got {feats.shape[1]}"
            )
        if coarse.shape[0] != feats.shape[0]:
            raise ValueError("features and coarse probabilities differ in length")
        return np.hstack([feats, coarse])

    def _forward(self, x):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if k == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def logits(self, features, coarse_probs) -> np.ndarray:
        return self._forward(self.inputs(features, coarse_probs))[-1][:, 0]

    def predict(self, features, coarse_probs) -> np.ndarray:
        return np.clip(expit(self.logits(features, coarse_probs)), _P_MIN, _P_MAX)

    def loss_and_grads(self, features, coarse_probs, targets, params: FocalLossParams):
        """Mean focal loss over a batch and its gradient for every parameter.

        Gradients come back in :meth:`parameters` order.
        """
        acts = self._forward(self.inputs(features, coarse_probs))
        logit = acts[-1][:, 0]
        p = expit(logit)
        targets = np.asarray(targets)
        n = p.shape[0]
        loss = float(np.mean(focal_binary(p, targets, params)))
        delta = (focal_binary_grad(p, targets, params) * p * (1.0 - p) / n)[:, None]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            grads_w[k] = acts[k].T @ delta
            grads_b[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (acts[k] > 0)
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend((gw, gb))
        return loss, grads

    def to_json(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "hidden_widths": list(self.hidden_widths),
            "layers": [
                {"w": w.tolist(), "b": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PointHeadModel":
        layers = obj["layers"]
        return cls(
            int(obj["in_dim"]),
            tuple(obj["hidden_widths"]),
            [np.array(layer["w"], dtype=np.float64) for layer in layers],
            [np.array(layer["b"], dtype=np.float64) for layer in layers],
        )


def point_head_forward(model: PointHeadModel, feature, coarse_prob: float) -> float:
    return float(model.predict(np.asarray(feature)[None, :], [coarse_prob])[0])


def subdivision_refine(model, coarse, fine_features: FeatureGrid, cfg=SubdivisionConfig()):
    """Coarse-to-fine refinement; returns a map of side ``cfg.output_size``.

    ``model`` only needs a ``predict(features, coarse_probs)`` method.
    """
    cur = np.asarray(coarse, dtype=np.float64)
    if cur.shape != (cfg.coarse_size, cfg.coarse_size):
        raise ValueError(
            f"coarse map is {cur.shape}, expected {cfg.coarse_size}x{cfg.coarse_size}"
        )
    channels = getattr(model, "feature_channels", fine_features.channels)
    if channels != fine_features.channels:
        raise ValueError(
            f"model expects {channels} channels, features have {fine_features.channels}"
        )
    for _ in range(cfg.steps):
        h, w = cur.shape
        up = resize_prob(cur, 2 * w, 2 * h)
        idx = uncertain_indices(up, cfg.points_per_step)
        pts = cell_points(idx, 2 * h, 2 * w)
        feats = bilinear_sample(fine_features, pts)
        flat = up.ravel()
        flat[idx] = np.clip(model.predict(feats, flat[idx]), 0.0, 1.0)
        cur = flat.reshape(up.shape)
    return cur


def _label_at(gt: np.ndarray, pts: np.ndarray) -> np.ndarray:
    h, w = gt.shape
    rows = np.rint(pts[:, 1] * (h - 1)).astype(np.intp)
    cols = np.rint(pts[:, 0] * (w - 1)).astype(np.intp)
    return gt[rows, cols].astype(np.int8)


def sample_training_points(fine_features, coarse, gt, n_uncertain: int, rng):
    """Training points for one example: the most uncertain cells of the
    coarse map upsampled to the ground-truth resolution, plus as many
    uniformly random points.

    Returns ``(features, coarse_probs, labels)``.
    """
    coarse = np.asarray(coarse, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    gh, gw = gt.shape
    up = resize_prob(coarse, gw, gh)
    idx = uncertain_indices(up, n_uncertain)
    pts_u = cell_points(idx, gh, gw)
    pts_r = rng.random((idx.size, 2))
    coarse_grid = FeatureGrid(coarse[None])
    pts = np.vstack([pts_u, pts_r])
    coarse_vals = np.concatenate([up.ravel()[idx], bilinear_sample(coarse_grid, pts_r)[:, 0]])
    feats = bilinear_sample(fine_features, pts)
    labels = np.concatenate([gt.ravel()[idx].astype(np.int8), _label_at(gt, pts_r)])
    return feats, coarse_vals, labels


def train_point_head(
    dataset,
    loss: FocalLossParams = FocalLossParams(),
    lr: float = 0.05,
    epochs: int = 30,
    seed: int = 0,
    hidden_widths=(64, 64, 64),
    points_per_example: int = 98,
    batch_size: int = 256,
    momentum: float = 0.9,
    model: PointHeadModel | None = None,
):
    """Fit the point head with mini-batch SGD (momentum) on focal loss.

    ``dataset`` is a sequence of ``(fine_features, coarse, gt_mask)``. The
    uncertain points of every example are fixed; the random half is redrawn
    each epoch. Returns ``(model, per_epoch_mean_loss)``.
    """
    if not dataset:
        raise ValueError("empty training set")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    rng = np.random.default_rng(seed)
    channels = dataset[0][0].channels
    if model is None:
        model = PointHeadModel.initialize(channels + 1, hidden_widths, rng)
    else:
        model = model.copy()
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    trace = []
    for epoch in range(epochs):
        parts = [
            sample_training_points(f, c, g, points_per_example, rng) for f, c, g in dataset
        ]
        feats = np.vstack([p[0] for p in parts])
        coarse = np.concatenate([p[1] for p in parts])
        labels = np.concatenate([p[2] for p in parts])
        order = rng.permutation(labels.size)
        total = 0.0
        for start in range(0, labels.size, batch_size):
            batch = order[start:start + batch_size]
            # divergence surfaces as a non-finite loss, checked just below
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = model.loss_and_grads(
                    feats[batch], coarse[batch], labels[batch], loss
                )
            if not np.isfinite(value):
                raise TrainingError(epoch, "non-finite loss")
            total += value * batch.size
            for p, v, g in zip(params, velocity, grads):
                v *= momentum
                v -= lr * g
                p += v
        trace.append(total / labels.size)
    return model, trace
