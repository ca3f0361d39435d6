"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 malformed input, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load_config
from .evaluation import coco_map
from .fusion import InstancePrediction, ensemble_merge, invert_prediction, tta_merge
from .masks import CodecError, bbox_of, correct_mask, resize_prob, threshold
from .pointhead import TrainingError, subdivision_refine, train_point_head
from .stats import summarize

log = logging.getLogger("maskrefine")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, out_help="output file"):
    p.add_argument("--config", type=Path, help="key = value run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", type=Path, required=True, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maskrefine", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="dataset analysis report")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--csv", type=Path, help="also write histograms as CSV")
    _common(p, "stats JSON")

    p = sub.add_parser("correct", help="clean annotation masks")
    p.add_argument("--gt", type=Path, required=True)
    _common(p, "corrected annotation file")

    p = sub.add_parser("refine", help="point-refine coarse mask predictions")
    p.add_argument("--pred", type=Path, required=True, action="append", help="coarse predictions")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    _common(p, "refined prediction file")

    p = sub.add_parser("tta-fuse", help="average predictions from augmented views")
    p.add_argument("--pred", type=Path, required=True, action="append",
                   help="one file per configured transform, in order")
    p.add_argument("--gt", type=Path, help="annotation file giving original image sizes")
    _common(p, "fused prediction file")

    p = sub.add_parser("ensemble", help="merge predictions of several models")
    p.add_argument("--pred", type=Path, required=True, action="append")
    _common(p, "merged prediction file")

    p = sub.add_parser("eval", help="mask mAP of predictions against ground truth")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--pred", type=Path, required=True, action="append")
    _common(p, "result JSON")

    p = sub.add_parser("train-demo", help="train the point head on synthetic disks")
    p.add_argument("--no-figures", action="store_true")
    _common(p, "output directory")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        cfg = replace(cfg, threads=args.threads)
    return cfg


def _pmap(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _single(paths, name):
    if len(paths) != 1:
        raise UsageError(f"{name} takes exactly one --pred file")
    return paths[0]


def _group_by_image(records_per_source):
    images = sorted({r.image_id for recs in records_per_source for r in recs}, key=_id_key)
    return images, [
        [[p for p in recs if p.image_id == img] for recs in records_per_source] for img in images
    ]


def _id_key(x):
    return (0, x, "") if isinstance(x, (int, float)) else (1, 0, str(x))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_stats(args, cfg):
    aset = io.read_annotations(args.gt)
    report = summarize(aset, coverage=cfg.anchor_coverage)
    io.dump_json(report, args.out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["histogram", "bin", "count"])
            for k, v in report["category_counts"].items():
                w.writerow(["category", k, v])
            labels = [f"<={e}" for e in report["area_edges"]] + [f">{report['area_edges'][-1]}"]
            for label, frac in zip(labels, report["area_fractions"]):
                w.writerow(["area_fraction", label, repr(frac)])
            for label, n in zip(report["aspect_ratio_bins"], report["aspect_ratio_counts"]):
                w.writerow(["aspect_ratio", label, n])
            w.writerow(["aspect_ratio", "degenerate", report["degenerate_boxes"]])
    print(_stats_text(report, aset))


def _stats_text(report, aset):
    names = {str(cid): name for cid, name in aset.categories}
    width = max([8] + [len(f"{k} {names[k]}") for k in report["category_counts"]])
    lines = [f"images {report['images']}   instances {report['instances']}", ""]
    lines.append(f"{'category':<{width}}  {'count':>7}")
    for k, n in report["category_counts"].items():
        lines.append(f"{(k + ' ' + names[k]).strip():<{width}}  {n:>7d}")
    lines.append("")
    edges = report["area_edges"]
    labels = [f"area <= {edges[0]}"] + [
        f"{a} < area <= {b}" for a, b in zip(edges, edges[1:])
    ] + [f"area > {edges[-1]}"]
    lw = max(len(s) for s in labels)
    for label, frac in zip(labels, report["area_fractions"]):
        lines.append(f"{label:<{lw}}  {100 * frac:6.2f}%")
    lines.append("")
    lines.append("aspect ratio (h:w)  " + "  ".join(f"{b:>5}" for b in report["aspect_ratio_bins"]))
    lines.append(" " * 20 + "  ".join(f"{n:>5d}" for n in report["aspect_ratio_counts"]))
    lines.append(f"degenerate boxes: {report['degenerate_boxes']}")
    lines.append("")
    lines.append(f"anchor sizes:  {report['anchor_sizes']}")
    lines.append(f"anchor ratios: {report['anchor_ratios']}")
    return "\n".join(lines)


def cmd_correct(args, cfg):
    def fix(mask):
        return correct_mask(mask, cfg.speckle_fraction, cfg.hole_fraction)

    io.dump_json(io.correct_annotation_file(args.gt, fix), args.out)


def _paste(refined, bbox, image_size):
    ih, iw = image_size
    x0, y0 = max(bbox.x, 0), max(bbox.y, 0)
    x1, y1 = min(bbox.x + bbox.w, iw), min(bbox.y + bbox.h, ih)
    full = np.zeros((ih, iw))
    if x1 <= x0 or y1 <= y0:
        return full
    box = resize_prob(refined, max(bbox.w, 1), max(bbox.h, 1))
    full[y0:y1, x0:x1] = box[y0 - bbox.y:y1 - bbox.y, x0 - bbox.x:x1 - bbox.x]
    return full


def cmd_refine(args, cfg):
    records = io.read_coarse_predictions(_single(args.pred, "refine"))
    grids = io.read_feature_grids(args.features)
    model = io.read_model(args.model)
    sub = cfg.subdivision

    def work(rec):
        if rec["instance_id"] not in grids:
            raise io.MalformedInputError(args.features, f"no features for instance {rec['instance_id']!r}")
        refined = subdivision_refine(model, rec["coarse"], grids[rec["instance_id"]], sub)
        full = _paste(refined, rec["bbox"], rec["image_size"])
        return InstancePrediction(
            rec["image_id"], rec["category_id"], rec["score"],
            bbox_of(threshold(full, sub.threshold)), full, rec["instance_id"],
        )

    preds = _pmap(work, records, cfg.threads)
    order = sorted(range(len(preds)), key=lambda k: (_id_key(preds[k].image_id), k))
    io.write_predictions([preds[k] for k in order], args.out)


def _image_sizes(path):
    return {img: (h, w) for img, w, h in io.read_annotations(path).images}


def cmd_tta_fuse(args, cfg):
    if len(args.pred) != len(cfg.tta):
        raise UsageError(
            f"{len(args.pred)} --pred files but {len(cfg.tta)} configured transforms"
        )
    views = [io.read_prediction_records(p) for p in args.pred]
    sizes = _image_sizes(args.gt) if args.gt else {}
    for t, recs in zip(cfg.tta, views):
        if t.kind != "rescale":
            for r in recs:
                sizes.setdefault(r["image_id"], r["rle"].size)
    aligned = []
    for t, recs in zip(cfg.tta, views):
        preds = []
        for r in recs:
            h, w = r["rle"].size
            oh, ow = sizes.get(r["image_id"], (
                max(1, int(np.floor(h / t.scale + 0.5))),
                max(1, int(np.floor(w / t.scale + 0.5))),
            ))
            p = io.record_to_prediction(r)
            mask = invert_prediction(p.mask, t, ow, oh)
            preds.append(replace(p, mask=mask, bbox=bbox_of(threshold(mask))))
        aligned.append(preds)
    images, grouped = _group_by_image(aligned)
    fused = _pmap(lambda g: tta_merge(g, cfg.ensemble_iou), grouped, cfg.threads)
    io.write_predictions([p for per_img in fused for p in per_img], args.out)


def cmd_ensemble(args, cfg):
    models = [[io.record_to_prediction(r) for r in io.read_prediction_records(p)] for p in args.pred]
    images, grouped = _group_by_image(models)
    merged = _pmap(lambda g: ensemble_merge(g, cfg.ensemble_iou, len(models)), grouped, cfg.threads)
    io.write_predictions([p for per_img in merged for p in per_img], args.out)


def cmd_eval(args, cfg):
    aset = io.read_annotations(args.gt)
    dets = io.records_to_detections(io.read_prediction_records(_single(args.pred, "eval")))
    result = coco_map(
        aset.instances,
        dets,
        categories=[c for c, _ in aset.categories],
        images=[i for i, _, _ in aset.images],
        max_dets=cfg.max_dets,
        threads=cfg.threads,
    )
    io.dump_json(result.to_json(), args.out)
    print(result.table())


def cmd_train_demo(args, cfg):
    from .synthetic import as_training_set, evaluate_refinement, make_disk_dataset

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    sub = cfg.subdivision
    train = make_disk_dataset(cfg.train_instances, cfg.seed, sub)
    test = make_disk_dataset(cfg.test_instances, cfg.seed + 1, sub)
    model, trace = train_point_head(
        as_training_set(train),
        loss=cfg.focal,
        lr=cfg.lr,
        epochs=cfg.epochs,
        seed=cfg.seed,
        hidden_widths=cfg.hidden_widths,
        points_per_example=cfg.points_per_example,
        batch_size=cfg.batch_size,
    )
    refined, bilinear, ref_each, bil_each = evaluate_refinement(model, test, sub)
    io.save_model(model, out / "model.json")
    with open(out / "loss_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_focal_loss", "weighted_point_loss"])
        for k, v in enumerate(trace, start=1):
            w.writerow([k, repr(v), repr(cfg.weights.w_point * v)])
    with open(out / "iou.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "bilinear_iou", "refined_iou"])
        for k, (b, r) in enumerate(zip(bil_each, ref_each)):
            w.writerow([k, repr(b), repr(r)])
    report = {
        "seed": cfg.seed,
        "train_instances": len(train),
        "test_instances": len(test),
        "epochs": cfg.epochs,
        "initial_loss": trace[0] if trace else None,
        "final_loss": trace[-1] if trace else None,
        "mean_iou_bilinear": bilinear,
        "mean_iou_refined": refined,
        "improvement": refined - bilinear,
    }
    io.dump_json(report, out / "report.json")
    if not args.no_figures:
        from . import plotting

        plotting.loss_curve(trace, out / "loss_curve.png")
        rows = []
        for d in test[:4]:
            side = sub.output_size
            rows.append((
                d.gt,
                threshold(resize_prob(d.coarse, side, side), sub.threshold),
                threshold(subdivision_refine(model, d.coarse, d.features, sub), sub.threshold),
            ))
        plotting.refinement_examples(rows, out / "refinement_examples.png")
    print(f"loss        {report['initial_loss']:.6f} -> {report['final_loss']:.6f}")
    print(f"bilinear    mean IoU {bilinear:.4f}")
    print(f"refined     mean IoU {refined:.4f}")
    print(f"improvement {refined - bilinear:+.4f}")


COMMANDS = {
    "stats": cmd_stats,
    "correct": cmd_correct,
    "refine": cmd_refine,
    "tta-fuse": cmd_tta_fuse,
    "ensemble": cmd_ensemble,
    "eval": cmd_eval,
    "train-demo": cmd_train_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.MalformedInputError, ConfigError, CodecError, json.JSONDecodeError) as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingError, AssertionError, RuntimeError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
