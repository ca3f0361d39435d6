"""Readers and writers for the JSON files exchanged between pipeline stages."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .evaluation import Detection, GroundTruthInstance
from .fusion import InstancePrediction
from .masks import BBox, CodecError, bbox_of, rle_decode, rle_encode, rle_from_json, rle_to_json, threshold
from .pointhead import FeatureGrid, PointHeadModel
from .stats import AnnotationSet


class MalformedInputError(ValueError):
    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def load_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MalformedInputError(path, f"cannot read file ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedInputError(path, exc.msg, exc.lineno) from exc


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


class _Reader:
    """Wraps record parsing so every failure names the file and record."""

    def __init__(self, path):
        self.path = path

    def fail(self, where: str, exc: Exception):
        raise MalformedInputError(self.path, f"{where}: {exc}") from exc

    def field(self, record, key, where):
        if not isinstance(record, dict):
            raise MalformedInputError(self.path, f"{where}: expected an object")
        if key not in record:
            raise MalformedInputError(self.path, f"{where}: missing key {key!r}")
        return record[key]


def _expect_list(data, path, what):
    if not isinstance(data, list):
        raise MalformedInputError(path, f"{what} must be a JSON list")
    return data


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

def read_annotations(path) -> AnnotationSet:
    data = load_json(path)
    r = _Reader(path)
    if not isinstance(data, dict):
        raise MalformedInputError(path, "annotation file must be a JSON object")
    images, instances, categories = [], [], []
    for k, im in enumerate(_expect_list(r.field(data, "images", "root"), path, "images")):
        where = f"images[{k}]"
        images.append((r.field(im, "id", where), int(r.field(im, "width", where)), int(r.field(im, "height", where))))
    for k, cat in enumerate(_expect_list(r.field(data, "categories", "root"), path, "categories")):
        where = f"categories[{k}]"
        categories.append((r.field(cat, "id", where), str(cat.get("name", ""))))
    for k, ann in enumerate(_expect_list(r.field(data, "annotations", "root"), path, "annotations")):
        where = f"annotations[{k}]"
        try:
            rle = rle_from_json(r.field(ann, "segmentation", where))
        except CodecError as exc:
            r.fail(where, exc)
        instances.append(
            GroundTruthInstance(
                r.field(ann, "image_id", where),
                r.field(ann, "category_id", where),
                rle,
                id=ann.get("id", k),
            )
        )
    try:
        return AnnotationSet(images, instances, categories)
    except ValueError as exc:
        raise MalformedInputError(path, str(exc)) from exc


def correct_annotation_file(path, corrector) -> dict:
    """Apply ``corrector`` to every annotation mask, keeping other fields."""
    data = load_json(path)
    r = _Reader(path)
    if not isinstance(data, dict):
        raise MalformedInputError(path, "annotation file must be a JSON object")
    out = dict(data)
    anns = []
    for k, ann in enumerate(_expect_list(r.field(data, "annotations", "root"), path, "annotations")):
        where = f"annotations[{k}]"
        try:
            mask = rle_decode(rle_from_json(r.field(ann, "segmentation", where)))
        except CodecError as exc:
            r.fail(where, exc)
        fixed = corrector(mask)
        new = dict(ann)
        new["segmentation"] = rle_to_json(rle_encode(fixed))
        new["area"] = int(np.count_nonzero(fixed))
        new["bbox"] = list(bbox_of(fixed))
        anns.append(new)
    out["annotations"] = anns
    return out


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------

def _score(value, where, path):
    try:
        score = float(value)
    except (TypeError, ValueError) as exc:
        raise MalformedInputError(path, f"{where}: bad score {value!r}") from exc
    if not 0.0 <= score <= 1.0:
        raise MalformedInputError(path, f"{where}: score {score} outside [0, 1]")
    return score


def read_prediction_records(path) -> list[dict]:
    """Parse a results file into dicts with ``image_id``, ``category_id``,
    ``score``, ``rle`` and optional ``bbox`` / ``instance_id``."""
    data = _expect_list(load_json(path), path, "prediction file")
    r = _Reader(path)
    records = []
    for k, rec in enumerate(data):
        where = f"[{k}]"
        try:
            rle = rle_from_json(r.field(rec, "segmentation", where))
        except CodecError as exc:
            r.fail(where, exc)
        bbox = rec.get("bbox")
        records.append(
            {
                "image_id": r.field(rec, "image_id", where),
                "category_id": r.field(rec, "category_id", where),
                "score": _score(r.field(rec, "score", where), where, path),
                "rle": rle,
                "bbox": BBox(*(int(round(v)) for v in bbox)) if bbox is not None else None,
                "instance_id": rec.get("instance_id"),
            }
        )
    return records


def records_to_detections(records) -> list[Detection]:
    return [Detection(r["image_id"], r["category_id"], r["score"], r["rle"]) for r in records]


def record_to_prediction(rec) -> InstancePrediction:
    mask = rle_decode(rec["rle"]).astype(np.float64)
    bbox = rec["bbox"] if rec["bbox"] is not None else bbox_of(mask >= 0.5)
    return InstancePrediction(
        rec["image_id"], rec["category_id"], rec["score"], bbox, mask, rec.get("instance_id")
    )


def prediction_to_record(p: InstancePrediction) -> dict:
    binary = threshold(p.mask)
    out = {
        "image_id": p.image_id,
        "category_id": p.category_id,
        "score": float(p.score),
        "bbox": list(bbox_of(binary)),
        "segmentation": rle_to_json(rle_encode(binary)),
    }
    if p.instance_id is not None:
        out["instance_id"] = p.instance_id
    return out


def write_predictions(preds, path) -> None:
    dump_json([prediction_to_record(p) for p in preds], path)


# ---------------------------------------------------------------------------
# refinement inputs
# ---------------------------------------------------------------------------

def read_feature_grids(path) -> dict:
    data = load_json(path)
    if isinstance(data, dict):
        data = [data]
    r = _Reader(path)
    grids = {}
    for k, rec in enumerate(_expect_list(data, path, "feature file")):
        where = f"[{k}]"
        c = int(r.field(rec, "channels", where))
        w = int(r.field(rec, "width", where))
        h = int(r.field(rec, "height", where))
        values = np.asarray(r.field(rec, "values", where), dtype=np.float64)
        if values.size != c * w * h:
            raise MalformedInputError(path, f"{where}: expected {c * w * h} values, got {values.size}")
        try:
            grids[r.field(rec, "instance_id", where)] = FeatureGrid(values.reshape(c, h, w))
        except ValueError as exc:
            r.fail(where, exc)
    return grids


def feature_grid_record(instance_id, grid: FeatureGrid) -> dict:
    return {
        "instance_id": instance_id,
        "channels": grid.channels,
        "width": grid.width,
        "height": grid.height,
        "values": grid.values.ravel().tolist(),
    }


def read_coarse_predictions(path) -> list[dict]:
    """Coarse-prediction file: a list of objects with ``instance_id``,
    ``image_id``, ``category_id``, ``score``, ``bbox`` ``[x, y, w, h]``,
    ``image_size`` ``[height, width]`` and ``coarse`` ``{"size": [h, w],
    "probs": [...]}`` (row-major)."""
    data = _expect_list(load_json(path), path, "coarse prediction file")
    r = _Reader(path)
    out = []
    for k, rec in enumerate(data):
        where = f"[{k}]"
        coarse = r.field(rec, "coarse", where)
        h, w = (int(v) for v in r.field(coarse, "size", where + ".coarse"))
        probs = np.asarray(r.field(coarse, "probs", where + ".coarse"), dtype=np.float64)
        if probs.size != h * w or np.any((probs < 0) | (probs > 1)) or np.any(np.isnan(probs)):
            raise MalformedInputError(path, f"{where}.coarse: need {h * w} probabilities in [0, 1]")
        ih, iw = (int(v) for v in r.field(rec, "image_size", where))
        out.append(
            {
                "instance_id": r.field(rec, "instance_id", where),
                "image_id": r.field(rec, "image_id", where),
                "category_id": r.field(rec, "category_id", where),
                "score": _score(r.field(rec, "score", where), where, path),
                "bbox": BBox(*(int(v) for v in r.field(rec, "bbox", where))),
                "image_size": (ih, iw),
                "coarse": probs.reshape(h, w),
            }
        )
    return out


def read_model(path) -> PointHeadModel:
    data = load_json(path)
    try:
        return PointHeadModel.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInputError(path, f"invalid point-head model: {exc}") from exc


def save_model(model: PointHeadModel, path) -> None:
    dump_json(model.to_json(), path)
