import json

import numpy as np
import pytest

from maskrefine.evaluation import (
    Detection,
    GroundTruthInstance,
    average_precision,
    coco_map,
    match_detections,
)
from maskrefine.masks import rle_encode

from oracles import brute_force_map
from scenes import random_scene, to_oracle, to_package

METRICS = ("map", "ap50", "ap75", "ap_small", "ap_medium", "ap_large")


def _square(x, y, side, size=64):
    m = np.zeros((size, size), bool)
    m[y:y + side, x:x + side] = True
    return m


def _metrics(r):
    return [getattr(r, k) for k in METRICS]


# -- matching -------------------------------------------------------------------

def test_match_examples():
    assert match_detections([[0.8]], 0.5).tolist() == [0]
    assert match_detections([[0.9], [0.7]], 0.5).tolist() == [0, -1]
    assert match_detections(np.zeros((3, 0)), 0.5).tolist() == [-1, -1, -1]
    assert match_detections([[0.4]], 0.5).tolist() == [-1]


def test_match_takes_best_free_ground_truth():
    ious = [[0.6, 0.9], [0.6, 0.9]]
    assert match_detections(ious, 0.5).tolist() == [1, 0]
    # equal IoU goes to the first ground truth
    assert match_detections([[0.7, 0.7]], 0.5).tolist() == [0]


def test_match_prefers_regular_over_ignored():
    assert match_detections([[0.6, 0.9]], 0.5, gt_ignore=[False, True]).tolist() == [0]
    assert match_detections([[0.3, 0.9]], 0.5, gt_ignore=[False, True]).tolist() == [1]


def test_average_precision_examples():
    assert average_precision([True], 1) == 1.0
    assert average_precision([True, False], 1) == 1.0
    assert average_precision([False, True], 1) == 0.5
    assert average_precision([], 3) == 0.0
    assert average_precision([True], 0) == -1.0
    # half recall: levels 0..50 reach precision 1, the rest nothing
    assert average_precision([True], 2) == pytest.approx(51 / 101)


# -- whole evaluator ----------------------------------------------------------------

def test_perfect_detections_score_one():
    masks = [_square(2, 2, 5), _square(10, 10, 40), _square(0, 0, 20)]
    gts = [GroundTruthInstance(1, 1, rle_encode(masks[0])),
           GroundTruthInstance(1, 2, rle_encode(masks[1])),
           GroundTruthInstance(2, 1, rle_encode(masks[2]))]
    dets = [Detection(g.image_id, g.category_id, 0.9, g.mask) for g in gts]
    r = coco_map(gts, dets)
    assert (r.map, r.ap50, r.ap75, r.ap_small, r.ap_medium) == (1.0, 1.0, 1.0, 1.0, 1.0)
    assert r.ap_large == -1.0
    assert set(r.per_category.values()) == {1.0}


def test_no_detections_score_zero():
    gts = [GroundTruthInstance(1, 1, rle_encode(_square(2, 2, 5)))]
    r = coco_map(gts, [])
    assert r.map == 0.0 and r.ap50 == 0.0


def test_unknown_category_counted_and_ignored():
    g = GroundTruthInstance(1, 1, rle_encode(_square(2, 2, 5)))
    r = coco_map([g], [Detection(1, 1, 0.5, g.mask), Detection(1, 7, 0.9, g.mask)])
    assert r.map == 1.0
    assert r.ignored_detections == 1


def test_gt_area_derived_from_mask():
    assert GroundTruthInstance(1, 1, rle_encode(_square(0, 0, 7))).area == 49


def test_detection_cap_per_image():
    g = GroundTruthInstance(1, 1, rle_encode(_square(2, 2, 5)))
    junk = [Detection(1, 1, 0.9, rle_encode(_square(40, 40, 5))) for _ in range(3)]
    good = Detection(1, 1, 0.5, g.mask)
    assert coco_map([g], junk + [good], max_dets=3).map == 0.0
    # three false positives ahead of the hit: precision 1/4 at every recall level
    assert coco_map([g], junk + [good], max_dets=4).ap50 == pytest.approx(0.25)


@pytest.mark.parametrize("seed", range(40))
def test_matches_brute_force(seed):
    gts, dets = random_scene(np.random.default_rng(seed))
    if not gts:
        return
    r = coco_map(*to_package(gts, dets))
    o = brute_force_map(*to_oracle(gts, dets))
    for k in METRICS:
        assert abs(getattr(r, k) - o[k]) < 1e-9, k
    for c, v in o["per_category"].items():
        assert abs(r.per_category[c] - v) < 1e-9


def test_map_bounded_by_best_category():
    for seed in range(10):
        gts, dets = random_scene(np.random.default_rng(100 + seed))
        if not gts:
            continue
        r = coco_map(*to_package(gts, dets))
        assert 0.0 <= r.map <= max(r.per_category.values())


def test_monotone_under_added_detections():
    checked = 0
    for seed in range(30):
        rng = np.random.default_rng(200 + seed)
        gts, dets = random_scene(rng)
        g, d = to_package(gts, dets)
        missed = [
            k for k, (i, c, m) in enumerate(gts)
            if not any(di == i and dc == c and (dm & m).any() for di, dc, _, dm in dets)
        ]
        if not missed:
            continue
        checked += 1
        base = coco_map(g, d)
        target = g[missed[0]]
        better = coco_map(g, d + [Detection(target.image_id, target.category_id, 1.0, target.mask)])
        for k in METRICS:
            if getattr(base, k) >= 0:
                assert getattr(better, k) >= getattr(base, k) - 1e-12, k
        # zero-overlap detection scored below everything else
        far = ~np.logical_or.reduce([m for i, c, m in gts if i == target.image_id] + [m for i, _, _, m in dets if i == target.image_id])
        if far.any():
            worse = coco_map(g, d + [Detection(target.image_id, target.category_id, 0.0, rle_encode(far))])
            assert worse.ap50 <= base.ap50 + 1e-12
    assert checked >= 3


def test_permutation_invariance_with_ties():
    for seed in range(10):
        rng = np.random.default_rng(300 + seed)
        gts, dets = random_scene(rng)
        if not gts:
            continue
        g, d = to_package(gts, dets)
        base = coco_map(g, d)
        # reordering detections that share no score keeps every metric
        by_score = {}
        for x in d:
            by_score.setdefault(x.score, []).append(x)
        groups = list(by_score.values())
        rng.shuffle(groups)
        shuffled = [x for grp in groups for x in grp]
        assert _metrics(coco_map(g, shuffled)) == _metrics(base)


def test_thread_count_does_not_change_result():
    gts, dets = random_scene(np.random.default_rng(5), n_images=6)
    g, d = to_package(gts, dets)
    one = coco_map(g, d, threads=1)
    many = coco_map(g, d, threads=4)
    assert json.dumps(one.to_json()) == json.dumps(many.to_json())


def test_table_rendering():
    g = GroundTruthInstance(1, "cat", rle_encode(_square(2, 2, 5)))
    text = coco_map([g], [Detection(1, "cat", 0.5, g.mask)]).table()
    lines = text.splitlines()
    assert lines[0].split() == ["mAP", "AP50", "AP75", "APs", "APm", "APl"]
    assert lines[1].split() == ["100.00", "100.00", "100.00", "100.00", "-", "-"]
    assert lines[-1].split() == ["cat", "100.00"]
