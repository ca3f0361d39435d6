"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports from the package under test except plain data types.
"""
from collections import deque
from itertools import permutations

import numpy as np


def runs_column_major(mask):
    h, w = len(mask), len(mask[0])
    counts, current, run = [], 0, 0
    for c in range(w):
        for r in range(h):
            v = 1 if mask[r][c] else 0
            if v == current:
                run += 1
            else:
                counts.append(run)
                current, run = v, 1
    counts.append(run)
    return counts


def coco_string(counts):
    """COCO compressed counts, done with integer arithmetic instead of bit ops."""
    chars = []
    for i, c in enumerate(counts):
        x = c - counts[i - 2] if i > 2 else c
        while True:
            low = x % 32  # five low bits of the two's complement value
            x = (x - low) // 32
            sign_bit = low >= 16
            done = (x == -1) if sign_bit else (x == 0)
            chars.append(chr(low + (0 if done else 32) + 48))
            if done:
                break
    return "".join(chars)


def flood_components(mask, eight=True):
    h, w = len(mask), len(mask[0])
    seen = [[False] * w for _ in range(h)]
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if eight:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    comps = []
    for r in range(h):
        for c in range(w):
            if mask[r][c] and not seen[r][c]:
                pix = []
                q = deque([(r, c)])
                seen[r][c] = True
                while q:
                    y, x = q.popleft()
                    pix.append(y * w + x)
                    for dy, dx in steps:
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy][xx] and not seen[yy][xx]:
                            seen[yy][xx] = True
                            q.append((yy, xx))
                comps.append(sorted(pix))
    comps.sort(key=lambda p: (-len(p), p[0]))
    return comps


def bilinear_resize_pointwise(grid, new_w, new_h):
    h, w = len(grid), len(grid[0])
    out = []
    for i in range(new_h):
        y = 0.0 if h == 1 or new_h == 1 else i * (h - 1) / (new_h - 1)
        row = []
        for j in range(new_w):
            x = 0.0 if w == 1 or new_w == 1 else j * (w - 1) / (new_w - 1)
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            tx, ty = x - x0, y - y0
            v = (
                grid[y0][x0] * (1 - tx) * (1 - ty)
                + grid[y0][x1] * tx * (1 - ty)
                + grid[y1][x0] * (1 - tx) * ty
                + grid[y1][x1] * tx * ty
            )
            row.append(v)
        out.append(row)
    return out


def mlp_forward(weights, biases, x):
    """Straight-line MLP evaluation with python floats."""
    h = list(map(float, x))
    for k, (w, b) in enumerate(zip(weights, biases)):
        fan_in, fan_out = len(w), len(w[0])
        z = []
        for j in range(fan_out):
            s = float(b[j])
            for i in range(fan_in):
                s += h[i] * float(w[i][j])
            z.append(s)
        h = z if k == len(weights) - 1 else [max(v, 0.0) for v in z]
    return 1.0 / (1.0 + np.exp(-h[0]))


# ---------------------------------------------------------------------------
# brute-force COCO-style evaluator
# ---------------------------------------------------------------------------

def _pixset(mask):
    return {(r, c) for r, row in enumerate(mask) for c, v in enumerate(row) if v}


def _iou(a, b):
    u = len(a | b)
    return len(a & b) / u if u else 0.0


def _bucket(area, name):
    if name == "all":
        return True
    if name == "small":
        return area < 32 * 32
    if name == "medium":
        return 32 * 32 <= area <= 96 * 96
    return area > 96 * 96


def _ap(flags, n_gt):
    if n_gt == 0:
        return -1.0
    total = 0.0
    for k in range(101):
        best = 0.0
        tp = fp = 0
        for f in flags:
            tp += f
            fp += not f
            if 100 * tp >= k * n_gt:
                best = max(best, tp / (tp + fp))
        total += best
    return total / 101


def brute_force_map(gts, dets, max_dets=100):
    """``gts``: list of (image, category, 2-D 0/1 list); ``dets``: list of
    (image, category, score, 2-D 0/1 list). Returns a dict of metrics."""
    thresholds = [round(0.5 + 0.05 * i, 2) for i in range(10)]
    images = sorted({g[0] for g in gts})
    cats = sorted({g[1] for g in gts})
    kept = []
    for img in images:
        mine = [(k, d) for k, d in enumerate(dets) if d[0] == img and d[1] in cats]
        mine.sort(key=lambda kd: (-kd[1][2], kd[0]))
        kept.extend(mine[:max_dets])
    gsets = [(g[0], g[1], _pixset(g[2])) for g in gts]
    dsets = {k: _pixset(dd[3]) for k, dd in kept}
    cache = {}

    def pair_iou(k, j):
        if (k, j) not in cache:
            cache[(k, j)] = _iou(dsets[k], gsets[j][2])
        return cache[(k, j)]

    ap = {}
    for cat in cats:
        for name in ("all", "small", "medium", "large"):
            for t in thresholds:
                rows, n_gt = [], 0
                for img in images:
                    gidx = [j for j, (i, c, _) in enumerate(gsets) if i == img and c == cat]
                    g = [gsets[j][2] for j in gidx]
                    d = [(k, dd[2], dsets[k]) for k, dd in kept if dd[0] == img and dd[1] == cat]
                    d.sort(key=lambda x: (-x[1], x[0]))
                    g_ign = [not _bucket(len(s), name) for s in g]
                    n_gt += sum(1 for x in g_ign if not x)
                    taken = [False] * len(g)
                    for k, score, ds in d:
                        choice = None
                        # regular ground truths first, ignored ones only as fallback
                        for pool in (False, True):
                            best, best_iou = None, None
                            for j in range(len(g)):
                                if taken[j] or g_ign[j] != pool:
                                    continue
                                v = pair_iou(k, gidx[j])
                                if v >= t and (best is None or v > best_iou):
                                    best, best_iou = j, v
                            if best is not None:
                                choice = best
                                break
                        if choice is not None:
                            taken[choice] = True
                            if not g_ign[choice]:
                                rows.append(((-score, k), True))
                        elif _bucket(len(ds), name):
                            rows.append(((-score, k), False))
                rows.sort()
                ap[(cat, name, t)] = _ap([f for _, f in rows], n_gt)

    def mean(cs, name, ts):
        vals = [ap[(c, name, t)] for c in cs for t in ts if ap[(c, name, t)] >= 0]
        return sum(vals) / len(vals) if vals else -1.0

    return {
        "map": mean(cats, "all", thresholds),
        "ap50": mean(cats, "all", [0.5]),
        "ap75": mean(cats, "all", [0.75]),
        "ap_small": mean(cats, "small", thresholds),
        "ap_medium": mean(cats, "medium", thresholds),
        "ap_large": mean(cats, "large", thresholds),
        "per_category": {c: mean([c], "all", thresholds) for c in cats},
    }


def best_assignment(ious):
    """Maximum total IoU one-to-one assignment between rows and columns."""
    n, m = len(ious), len(ious[0]) if ious else 0
    best, best_pairs = -1.0, []
    if n <= m:
        for perm in permutations(range(m), n):
            s = sum(ious[i][perm[i]] for i in range(n))
            if s > best:
                best, best_pairs = s, [(i, perm[i]) for i in range(n)]
    else:
        for perm in permutations(range(n), m):
            s = sum(ious[perm[j]][j] for j in range(m))
            if s > best:
                best, best_pairs = s, [(perm[j], j) for j in range(m)]
    return best_pairs
