"""Focal loss in binary, multi-class and per-mask form, plus loss weighting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-7


@dataclass(frozen=True)
class FocalLossParams:
    """``alpha`` holds per-class weights; a single entry is shared by all classes."""

    alpha: tuple[float, ...] = (1.0,)
    gamma: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if not self.alpha or any(a <= 0 for a in self.alpha):
            raise ValueError("alpha weights must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    def alpha_for(self, cls: int) -> float:
        if len(self.alpha) == 1:
            return self.alpha[0]
        return self.alpha[cls]


@dataclass(frozen=True)
class CompositeLossWeights:
    w_cls: float = 1.0
    w_box: float = 1.0
    w_mask: float = 1.1
    w_point: float = 1.0

    def __post_init__(self):
        if min(self.w_cls, self.w_box, self.w_mask, self.w_point) < 0:
            raise ValueError("loss weights must be non-negative")


def _p_t(p, target):
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    target = np.asarray(target)
    return np.where(target == 1, p, 1.0 - p)


def _focal(pt, alpha, gamma):
    return -alpha * (1.0 - pt) ** gamma * np.log(pt)


def focal_binary(p, target, params: FocalLossParams = FocalLossParams()):
    """Focal loss of foreground probability ``p`` against a 0/1 target.

    Works elementwise on arrays. ``alpha[1]`` weights positives and
    ``alpha[0]`` negatives when two weights are given.
    """
    pt = _p_t(p, target)
    alpha = _binary_alpha(target, params)
    loss = _focal(pt, alpha, params.gamma)
    return float(loss) if np.ndim(loss) == 0 else loss


def _binary_alpha(target, params):
    if len(params.alpha) == 1:
        return params.alpha[0]
    return np.where(np.asarray(target) == 1, params.alpha[1], params.alpha[0])


def focal_binary_grad(p, target, params: FocalLossParams = FocalLossParams()):
    """Derivative of :func:`focal_binary` with respect to ``p``.

    Evaluated at the clamped probability; the clamp itself is not
    differentiated.
    """
    pt = _p_t(p, target)
    alpha = _binary_alpha(target, params)
    r = params.gamma
    one_minus = 1.0 - pt
    d_pt = -alpha * one_minus**r / pt
    if r != 0:
        d_pt = d_pt + alpha * r * one_minus ** (r - 1) * np.log(pt)
    sign = np.where(np.asarray(target) == 1, 1.0, -1.0)
    grad = d_pt * sign
    return float(grad) if np.ndim(grad) == 0 else grad


def focal_multiclass(probs, target: int, params: FocalLossParams = FocalLossParams()) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size < 2:
        raise ValueError("need a probability vector over at least two classes")
    if not 0 <= target < probs.size:
        raise ValueError(f"target {target} out of range for {probs.size} classes")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError("probabilities must form a simplex")
    pt = min(max(probs[target], EPS), 1.0 - EPS)
    return float(_focal(pt, params.alpha_for(target), params.gamma))


def focal_mask(pred, gt, params: FocalLossParams = FocalLossParams()) -> float:
    """Per-pixel mean focal loss of a probability map against a binary mask."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.mean(focal_binary(pred, gt.astype(np.int8), params)))


def composite_loss(l_cls, l_box, l_mask, l_point, w: CompositeLossWeights = CompositeLossWeights()):
    return w.w_cls * l_cls + w.w_box * l_box + w.w_mask * l_mask + w.w_point * l_point
