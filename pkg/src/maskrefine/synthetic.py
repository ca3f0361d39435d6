"""Seeded synthetic disk benchmark for the point head.

Each instance is a disk inside a unit box. The ground truth is rasterized
analytically at the output resolution; the coarse map is a blurred coverage
estimate on a ``coarse_size`` grid; the fine features are a noisy view of the
disk at the output resolution plus distractor channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .masks import mask_iou, resize_prob, threshold
from .pointhead import FeatureGrid, SubdivisionConfig, subdivision_refine

FEATURE_CHANNELS = 3


@dataclass(frozen=True)
class DiskInstance:
    features: FeatureGrid
    coarse: np.ndarray
    gt: np.ndarray
    center: tuple[float, float]
    radius: float


def rasterize_disk(cx: float, cy: float, radius: float, side: int) -> np.ndarray:
    t = np.arange(side) / (side - 1)
    return (t[None, :] - cx) ** 2 + (t[:, None] - cy) ** 2 <= radius**2


def _coverage(cx, cy, radius, size, supersample=8, spread=1.0):
    # fraction of a square of half-width spread/(size-1) around each cell center
    # that lies inside the disk
    half = spread / (size - 1)
    offs = (np.arange(supersample) + 0.5) / supersample * 2 * half - half
    centers = np.arange(size) / (size - 1)
    xs = centers[:, None] + offs[None, :]
    dx = (xs - cx) ** 2
    dy = (xs - cy) ** 2
    inside = dy[:, None, :, None] + dx[None, :, None, :] <= radius**2
    return inside.mean(axis=(2, 3))


def make_disk_instance(rng, cfg: SubdivisionConfig = SubdivisionConfig(), noise=0.15):
    side = cfg.output_size
    cx, cy = rng.uniform(0.4, 0.6, size=2)
    radius = rng.uniform(0.18, 0.38)
    gt = rasterize_disk(cx, cy, radius, side)
    coarse = np.clip(_coverage(cx, cy, radius, cfg.coarse_size, spread=0.75), 0.0, 1.0)
    img = gt.astype(np.float64)
    ch0 = ndimage.gaussian_filter(img, 0.7) + rng.normal(0.0, noise, img.shape)
    ch1 = ndimage.gaussian_filter(img, 2.0) + rng.normal(0.0, noise, img.shape)
    ch2 = rng.normal(0.0, 1.0, img.shape)
    feats = FeatureGrid(np.stack([ch0, ch1, ch2]))
    return DiskInstance(feats, coarse, gt, (float(cx), float(cy)), float(radius))


def make_disk_dataset(n: int, seed: int, cfg: SubdivisionConfig = SubdivisionConfig()):
    rng = np.random.default_rng(seed)
    return [make_disk_instance(rng, cfg) for _ in range(n)]


def as_training_set(instances):
    return [(d.features, d.coarse, d.gt) for d in instances]


def evaluate_refinement(model, instances, cfg: SubdivisionConfig = SubdivisionConfig()):
    """Mean IoU of refined and of bilinear-only masks against ground truth."""
    refined, bilinear = [], []
    side = cfg.output_size
    for d in instances:
        up = resize_prob(d.coarse, side, side)
        ref = subdivision_refine(model, d.coarse, d.features, cfg)
        bilinear.append(mask_iou(threshold(up, cfg.threshold), d.gt))
        refined.append(mask_iou(threshold(ref, cfg.threshold), d.gt))
    return float(np.mean(refined)), float(np.mean(bilinear)), refined, bilinear
