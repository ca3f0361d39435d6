"""COCO-style mask average precision.

Conventions: IoU thresholds 0.50:0.05:0.95, 101 recall levels, at most
``max_dets`` detections per image (highest scores, ties by input order),
area buckets small ``< 32^2``, medium ``[32^2, 96^2]``, large ``> 96^2``.
Within a bucket, ground truths outside it are ignored and so are detections
matched to them or, when unmatched, lying outside it themselves.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .masks import Rle, rle_area, rle_decode

log = logging.getLogger(__name__)

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_LEVELS = 101
AREA_RANGES = {
    "all": (0.0, float("inf"), True, True),
    "small": (0.0, 32.0**2, True, False),
    "medium": (32.0**2, 96.0**2, True, True),
    "large": (96.0**2, float("inf"), False, True),
}


@dataclass(frozen=True)
class GroundTruthInstance:
    image_id: Hashable
    category_id: Hashable
    mask: Rle
    area: int = -1
    id: Hashable | None = None

    def __post_init__(self):
        if self.area < 0:
            object.__setattr__(self, "area", rle_area(self.mask))


@dataclass(frozen=True)
class Detection:
    image_id: Hashable
    category_id: Hashable
    score: float
    mask: Rle


@dataclass
class EvalResult:
    map: float
    ap50: float
    ap75: float
    ap_small: float
    ap_medium: float
    ap_large: float
    per_category: dict = field(default_factory=dict)
    ignored_detections: int = 0

    def to_json(self) -> dict:
        return {
            "map": self.map,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "per_category": {str(k): v for k, v in self.per_category.items()},
            "ignored_detections": self.ignored_detections,
        }

    def table(self) -> str:
        head = ["mAP", "AP50", "AP75", "APs", "APm", "APl"]
        vals = [self.map, self.ap50, self.ap75, self.ap_small, self.ap_medium, self.ap_large]
        lines = [
            "  ".join(f"{h:>7}" for h in head),
            "  ".join(_fmt(v) for v in vals),
        ]
        if self.per_category:
            width = max(8, max(len(str(k)) for k in self.per_category))
            lines.append("")
            lines.append(f"{'category':<{width}}  {'AP':>7}")
            for k, v in self.per_category.items():
                lines.append(f"{str(k):<{width}}  {_fmt(v)}")
        return "\n".join(lines)


def _fmt(v: float) -> str:
    return f"{'-':>7}" if v < 0 else f"{100 * v:7.2f}"


def match_detections(ious, iou_thresh: float, gt_ignore=None) -> np.ndarray:
    """Greedy matching for one image and category.

    ``ious`` is ``(num_dets, num_gts)`` with detections already in descending
    score order. Each detection takes the unmatched ground truth with the
    highest IoU at or above ``iou_thresh`` (first one on ties); ground truths
    flagged in ``gt_ignore`` are only considered when no regular one
    qualifies. Returns the matched ground-truth index per detection, or -1.
    """
    ious = np.asarray(ious, dtype=np.float64)
    n_det, n_gt = ious.shape if ious.ndim == 2 else (len(ious), 0)
    ignore = np.zeros(n_gt, dtype=bool) if gt_ignore is None else np.asarray(gt_ignore, bool)
    gt_order = np.argsort(ignore, kind="stable")
    taken = np.zeros(n_gt, dtype=bool)
    matches = np.full(n_det, -1, dtype=np.intp)
    for d in range(n_det):
        best = -1
        best_iou = iou_thresh
        for g in gt_order:
            if taken[g]:
                continue
            if best >= 0 and not ignore[best] and ignore[g]:
                break
            iou = ious[d, g]
            if iou < iou_thresh or (best >= 0 and iou <= best_iou):
                continue
            best, best_iou = g, iou
        if best >= 0:
            taken[best] = True
            matches[d] = best
    return matches


def average_precision(flags, num_gt: int) -> float:
    """101-point interpolated AP of ordered TP/FP flags; -1 when ``num_gt`` is 0."""
    if num_gt == 0:
        return -1.0
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    precision = tp / (tp + fp)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    # recall >= k/100  <=>  100*tp >= k*num_gt, compared in integers
    idx = np.searchsorted(100 * tp, np.arange(RECALL_LEVELS) * num_gt, side="left")
    hit = idx < tp.size
    q = np.zeros(RECALL_LEVELS)
    q[hit] = precision[idx[hit]]
    return float(q.mean())


def _iou_matrix(det_masks, det_areas, gt_masks, gt_areas):
    out = np.zeros((len(det_masks), len(gt_masks)))
    for i, dm in enumerate(det_masks):
        for j, gm in enumerate(gt_masks):
            if dm.shape != gm.shape:
                raise ValueError("detection and ground-truth masks differ in size")
            inter = np.count_nonzero(dm & gm)
            union = det_areas[i] + gt_areas[j] - inter
            out[i, j] = inter / union if union else 0.0
    return out


def _in_range(area, rng):
    lo, hi, lo_closed, hi_closed = rng
    above = area >= lo if lo_closed else area > lo
    below = area <= hi if hi_closed else area < hi
    return above and below


def _evaluate_image(gts, dets, categories):
    """Per category/area/threshold: list of (det_key, tp flag) plus GT count."""
    out = {}
    for cat in categories:
        g = [x for x in gts if x.category_id == cat]
        d = [x for x in dets if x[1].category_id == cat]
        if not g and not d:
            continue
        gm = [rle_decode(x.mask) for x in g]
        ga = [x.area for x in g]
        dm = [rle_decode(x[1].mask) for x in d]
        da = [rle_area(x[1].mask) for x in d]
        ious = _iou_matrix(dm, da, gm, ga)
        for name, rng in AREA_RANGES.items():
            g_ignore = np.array([not _in_range(a, rng) for a in ga], dtype=bool)
            d_outside = np.array([not _in_range(a, rng) for a in da], dtype=bool)
            n_gt = int(np.count_nonzero(~g_ignore))
            for t in IOU_THRESHOLDS:
                matches = match_detections(ious.reshape(len(d), len(g)), t, g_ignore)
                rows = []
                for k, m in enumerate(matches):
                    ignored = g_ignore[m] if m >= 0 else d_outside[k]
                    if not ignored:
                        rows.append((d[k][0], m >= 0))
                out[(cat, name, t)] = (rows, n_gt)
    return out


def coco_map(
    gts: Sequence[GroundTruthInstance],
    dets: Sequence[Detection],
    categories: Sequence[Hashable] | None = None,
    images: Sequence[Hashable] | None = None,
    max_dets: int = 100,
    threads: int = 1,
) -> EvalResult:
    if categories is None:
        categories = sorted({g.category_id for g in gts}, key=_sort_key)
    if images is None:
        images = sorted({g.image_id for g in gts}, key=_sort_key)
    cat_set = set(categories)
    img_set = set(images)

    ignored = 0
    dets_by_img: dict = {i: [] for i in images}
    for k, det in enumerate(dets):
        if det.category_id not in cat_set or det.image_id not in img_set:
            ignored += 1
            continue
        # keys (-score, input index) give the canonical detection order
        dets_by_img[det.image_id].append(((-float(det.score), k), det))
    if ignored:
        log.warning("ignored %d detections with unknown image or category", ignored)
    gts_by_img: dict = {i: [] for i in images}
    for g in gts:
        if g.category_id in cat_set and g.image_id in img_set:
            gts_by_img[g.image_id].append(g)

    def work(img):
        d = sorted(dets_by_img[img], key=lambda x: x[0])[:max_dets]
        return _evaluate_image(gts_by_img[img], d, categories)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_image = list(pool.map(work, images))
    else:
        per_image = [work(i) for i in images]

    ap = {}
    for cat in categories:
        for name in AREA_RANGES:
            for t in IOU_THRESHOLDS:
                rows, n_gt = [], 0
                for res in per_image:
                    r, n = res.get((cat, name, t), ([], 0))
                    rows.extend(r)
                    n_gt += n
                rows.sort(key=lambda x: x[0])
                ap[(cat, name, t)] = average_precision([f for _, f in rows], n_gt)

    def mean(cats, name, thresholds):
        vals = [ap[(c, name, t)] for c in cats for t in thresholds]
        vals = [v for v in vals if v >= 0]
        return float(np.mean(vals)) if vals else -1.0

    per_category = {c: mean([c], "all", IOU_THRESHOLDS) for c in categories}
    return EvalResult(
        map=mean(categories, "all", IOU_THRESHOLDS),
        ap50=mean(categories, "all", (0.5,)),
        ap75=mean(categories, "all", (0.75,)),
        ap_small=mean(categories, "small", IOU_THRESHOLDS),
        ap_medium=mean(categories, "medium", IOU_THRESHOLDS),
        ap_large=mean(categories, "large", IOU_THRESHOLDS),
        per_category=per_category,
        ignored_detections=ignored,
    )


def _sort_key(x):
    return (0, x, "") if isinstance(x, (int, float)) else (1, 0, str(x))
