"""Test-time augmentation alignment/averaging and cross-model ensembling."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Hashable, Sequence

import numpy as np

from .masks import BBox, bbox_of, box_iou, resize_prob, threshold

__all__ = [
    "InstancePrediction",
    "TtaTransform",
    "apply_transform",
    "invert_prediction",
    "tta_average",
    "cluster_predictions",
    "tta_merge",
    "ensemble_merge",
]


@dataclass(frozen=True)
class InstancePrediction:
    image_id: Hashable
    category_id: Hashable
    score: float
    bbox: BBox
    mask: np.ndarray  # probability map at image resolution
    instance_id: Hashable | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class TtaTransform:
    kind: str  # "identity", "horizontal_flip" or "rescale"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "horizontal_flip", "rescale"):
            raise ValueError(f"unknown transform {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def parse(cls, text: str) -> "TtaTransform":
        """Parse ``identity``, ``hflip`` or ``scale:<factor>``."""
        text = text.strip()
        if text in ("identity", "none"):
            return cls("identity")
        if text in ("hflip", "horizontal_flip"):
            return cls("horizontal_flip")
        if text.startswith("scale:"):
            return cls("rescale", float(text.split(":", 1)[1]))
        raise ValueError(f"unknown transform {text!r}")

    def __str__(self):
        if self.kind == "rescale":
            return f"scale:{self.scale:g}"
        return "hflip" if self.kind == "horizontal_flip" else "identity"


def _scaled(n: int, scale: float) -> int:
    return max(1, int(np.floor(n * scale + 0.5)))


def apply_transform(mask, t: TtaTransform) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if t.kind == "horizontal_flip":
        return m[:, ::-1].copy()
    if t.kind == "rescale":
        h, w = m.shape
        return resize_prob(m, _scaled(w, t.scale), _scaled(h, t.scale))
    return m.copy()


def invert_prediction(mask, t: TtaTransform, original_w: int, original_h: int) -> np.ndarray:
    """Map a prediction made under ``t`` back onto the original image grid."""
    m = np.asarray(mask, dtype=np.float64)
    if t.kind == "horizontal_flip":
        m = m[:, ::-1]
    if m.shape != (original_h, original_w):
        return resize_prob(m, original_w, original_h)
    return m.copy()


def _pixel_mean(maps):
    # offsets from the first map: identical inputs give that map back exactly
    base = np.asarray(maps[0], dtype=np.float64)
    offset = np.mean([np.asarray(m, dtype=np.float64) - base for m in maps], axis=0)
    return np.clip(base + offset, 0.0, 1.0)


def tta_average(aligned: Sequence[np.ndarray], scores: Sequence[float]):
    if not aligned:
        raise ValueError("nothing to average")
    if len(aligned) != len(scores):
        raise ValueError("one score per map is required")
    maps = [np.asarray(a, dtype=np.float64) for a in aligned]
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ValueError("aligned maps differ in shape")
    s = np.asarray(scores, dtype=np.float64)
    return _pixel_mean(maps), float(s[0] + np.mean(s - s[0]))


def cluster_predictions(per_source: Sequence[Sequence[InstancePrediction]], iou_thresh: float = 0.5):
    """Greedy cross-source clustering by box IoU.

    Predictions are visited by descending score (ties keep source order).
    Each unassigned prediction seeds a cluster and takes, from every other
    source, the unassigned same-category prediction with the highest box IoU
    at or above ``iou_thresh``. Returns clusters as lists of
    ``(source_index, prediction)``, seed first.
    """
    flat = [(s, i, p) for s, preds in enumerate(per_source) for i, p in enumerate(preds)]
    order = sorted(range(len(flat)), key=lambda k: -flat[k][2].score)
    used = [False] * len(flat)
    by_source: dict[int, list[int]] = {}
    for k, (s, _, _) in enumerate(flat):
        by_source.setdefault(s, []).append(k)
    clusters = []
    for k in order:
        if used[k]:
            continue
        used[k] = True
        s0, _, seed = flat[k]
        members = [(s0, seed)]
        for s, ks in by_source.items():
            if s == s0:
                continue
            best, best_iou = None, -1.0
            for j in ks:
                cand = flat[j][2]
                if used[j] or cand.category_id != seed.category_id:
                    continue
                iou = box_iou(seed.bbox, cand.bbox)
                if iou >= iou_thresh and iou > best_iou:
                    best, best_iou = j, iou
            if best is not None:
                used[best] = True
                members.append((s, flat[best][2]))
        clusters.append(members)
    return clusters


def ensemble_merge(per_model, iou_thresh: float = 0.5, total_models: int | None = None):
    """Merge one image's predictions from several models.

    Each cluster becomes one instance whose mask is the pixelwise mean of
    its members and whose score is the members' score sum divided by the
    number of models, so instances few models agree on are damped.
    """
    total_models = len(per_model) if total_models is None else total_models
    if total_models < 1:
        raise ValueError("total_models must be positive")
    ids = {p.image_id for preds in per_model for p in preds}
    if len(ids) > 1:
        raise ValueError(f"predictions span several images: {sorted(map(str, ids))}")
    merged = []
    for members in cluster_predictions(per_model, iou_thresh):
        preds = [p for _, p in members]
        seed = preds[0]
        if len(preds) == 1:
            mask = np.asarray(seed.mask, dtype=np.float64)
        else:
            mask = _pixel_mean([p.mask for p in preds])
        score = min(sum(p.score for p in preds) / total_models, 1.0)
        merged.append(
            replace(seed, score=score, mask=mask, bbox=bbox_of(threshold(mask)))
        )
    return merged


def tta_merge(per_view, iou_thresh: float = 0.5):
    """Fuse one image's predictions from several aligned TTA views.

    Views are clustered like an ensemble; each cluster is averaged with
    :func:`tta_average` over the views that found it.
    """
    ids = {p.image_id for preds in per_view for p in preds}
    if len(ids) > 1:
        raise ValueError(f"predictions span several images: {sorted(map(str, ids))}")
    fused = []
    for members in cluster_predictions(per_view, iou_thresh):
        preds = [p for _, p in members]
        mask, score = tta_average([p.mask for p in preds], [p.score for p in preds])
        fused.append(replace(preds[0], score=score, mask=mask, bbox=bbox_of(threshold(mask))))
    return fused
