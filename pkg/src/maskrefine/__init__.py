"""Mask refinement, fusion and evaluation toolkit for instance segmentation."""

from .evaluation import Detection, EvalResult, GroundTruthInstance, coco_map
from .fusion import InstancePrediction, TtaTransform, ensemble_merge, tta_average
from .losses import CompositeLossWeights, FocalLossParams, composite_loss, focal_binary
from .masks import BBox, CodecError, Rle, correct_mask, mask_iou, rle_decode, rle_encode
from .pointhead import FeatureGrid, PointHeadModel, SubdivisionConfig, subdivision_refine

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CodecError",
    "CompositeLossWeights",
    "Detection",
    "EvalResult",
    "FeatureGrid",
    "FocalLossParams",
    "GroundTruthInstance",
    "InstancePrediction",
    "PointHeadModel",
    "Rle",
    "SubdivisionConfig",
    "TtaTransform",
    "coco_map",
    "composite_loss",
    "correct_mask",
    "ensemble_merge",
    "focal_binary",
    "mask_iou",
    "rle_decode",
    "rle_encode",
    "subdivision_refine",
    "tta_average",
]
