"""Dataset analysis: class balance, object areas, aspect ratios, anchors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .evaluation import GroundTruthInstance
from .masks import bbox_of, rle_decode

__all__ = [
    "AnnotationSet",
    "AnchorConfig",
    "CANDIDATE_RATIOS",
    "DEFAULT_AREA_EDGES",
    "RESIZE_FACTOR",
    "category_histogram",
    "area_buckets",
    "aspect_ratios",
    "default_ratio_edges",
    "aspect_ratio_histogram",
    "recommend_anchors",
    "summarize",
]

DEFAULT_AREA_EDGES = (96**2, 256**2)
# images are trained at a side drawn from [1200, 1500]; anchors use the midpoint
RESIZE_FACTOR = 1350 / 1200
CANDIDATE_RATIOS = (1 / 3, 1 / 2, 1.0, 2.0, 3.0)  # h / w
_RATIO_SETS = ((1.0,), (1 / 2, 1.0, 2.0), CANDIDATE_RATIOS)


@dataclass
class AnnotationSet:
    images: list  # (id, width, height)
    instances: list[GroundTruthInstance]
    categories: list  # (id, name)
    _boxes: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        img_ids = {i[0] for i in self.images}
        cat_ids = {c[0] for c in self.categories}
        for inst in self.instances:
            if inst.image_id not in img_ids:
                raise ValueError(f"instance references unknown image {inst.image_id!r}")
            if inst.category_id not in cat_ids:
                raise ValueError(f"instance references unknown category {inst.category_id!r}")

    def boxes(self):
        if self._boxes is None:
            self._boxes = [bbox_of(rle_decode(i.mask)) for i in self.instances]
        return self._boxes


@dataclass(frozen=True)
class AnchorConfig:
    sizes: tuple[int, ...]
    ratios: tuple[float, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("anchor sizes must be strictly increasing")
        if any(r <= 0 for r in self.ratios):
            raise ValueError("aspect ratios must be positive")


def category_histogram(a: AnnotationSet) -> dict[Hashable, int]:
    counts = {cid: 0 for cid, _ in a.categories}
    for inst in a.instances:
        counts[inst.category_id] += 1
    return counts


def area_buckets(a: AnnotationSet, edges=DEFAULT_AREA_EDGES) -> list[float]:
    """Fractions of instances with area in ``(-inf, e1], (e1, e2], ..., (ek, inf)``."""
    edges = list(edges)
    if any(b <= c for b, c in zip(edges[1:], edges)):
        raise ValueError("bucket edges must be strictly increasing")
    if not a.instances:
        raise ValueError("no instances to bucket")
    areas = np.array([i.area for i in a.instances], dtype=np.float64)
    idx = np.searchsorted(np.asarray(edges, dtype=np.float64), areas, side="left")
    counts = np.bincount(idx, minlength=len(edges) + 1)
    return (counts / areas.size).tolist()


def aspect_ratios(a: AnnotationSet):
    """Height/width ratios of instance boxes and the number of degenerate boxes."""
    ratios, degenerate = [], 0
    for box in a.boxes():
        if box.w == 0 or box.h == 0:
            degenerate += 1
        else:
            ratios.append(box.h / box.w)
    return np.array(ratios), degenerate


def default_ratio_edges() -> list[float]:
    """Log-ratio edges halfway between neighbouring candidate ratios."""
    logs = np.log(CANDIDATE_RATIOS)
    return [-math.inf, *((logs[:-1] + logs[1:]) / 2).tolist(), math.inf]


def aspect_ratio_histogram(a: AnnotationSet, bin_edges=None):
    """Counts of ``log(h / w)`` per bin; values beyond the outer edges go to the
    outermost bins. Returns ``(counts, degenerate)``."""
    edges = np.asarray(default_ratio_edges() if bin_edges is None else bin_edges, float)
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    ratios, degenerate = aspect_ratios(a)
    idx = np.searchsorted(edges, np.log(ratios), side="right") - 1
    idx = np.clip(idx, 0, edges.size - 2)
    counts = np.bincount(idx, minlength=edges.size - 1)
    return counts.tolist(), degenerate


def recommend_anchors(a: AnnotationSet, coverage: float = 0.9) -> AnchorConfig:
    """Power-of-two anchor sizes and the smallest symmetric ratio set.

    Sizes run between the 5th and 95th percentiles of ``sqrt(area)`` after
    scaling to the training resolution, each end rounded to the nearest power
    of two in log space.
    """
    if not a.instances:
        raise ValueError("no instances")
    side = np.sqrt([i.area for i in a.instances if i.area > 0]) * RESIZE_FACTOR
    if side.size == 0:
        raise ValueError("all instances are empty")
    lo, hi = np.percentile(side, [5, 95])
    e_lo = int(math.floor(math.log2(lo) + 0.5))
    e_hi = int(math.floor(math.log2(hi) + 0.5))
    sizes = tuple(2**e for e in range(e_lo, e_hi + 1))

    counts, _ = aspect_ratio_histogram(a)
    total = sum(counts)
    ratios = _RATIO_SETS[-1]
    if total:
        for cand in _RATIO_SETS:
            covered = sum(c for c, r in zip(counts, CANDIDATE_RATIOS) if r in cand)
            if covered >= coverage * total:
                ratios = cand
                break
    return AnchorConfig(sizes, tuple(ratios))


def summarize(a: AnnotationSet, area_edges=DEFAULT_AREA_EDGES, coverage: float = 0.9) -> dict:
    counts, degenerate = aspect_ratio_histogram(a)
    anchors = recommend_anchors(a, coverage) if a.instances else None
    return {
        "images": len(a.images),
        "instances": len(a.instances),
        "category_counts": {str(k): v for k, v in category_histogram(a).items()},
        "area_edges": list(area_edges),
        "area_fractions": area_buckets(a, area_edges) if a.instances else [],
        "aspect_ratio_bins": [_ratio_label(r) for r in CANDIDATE_RATIOS],
        "aspect_ratio_counts": counts,
        "degenerate_boxes": degenerate,
        "anchor_sizes": list(anchors.sizes) if anchors else [],
        "anchor_ratios": [_ratio_label(r) for r in anchors.ratios] if anchors else [],
    }


def _ratio_label(r: float) -> str:
    return f"1:{round(1 / r)}" if r < 1 else f"{round(r)}:1"
