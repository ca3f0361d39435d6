"""Mask primitives: RLE codecs, IoU, boxes, resampling, components, correction.

Masks are plain 2-D numpy arrays indexed ``[row, col]``. Binary masks are
``bool`` arrays; probability masks are ``float64`` arrays with values in
``[0, 1]``. Run-length encodings follow the COCO convention: pixels are read
column-major and the first run always counts zeros.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

__all__ = [
    "CodecError",
    "Rle",
    "BBox",
    "Component",
    "as_binary",
    "as_probability",
    "threshold",
    "rle_encode",
    "rle_decode",
    "rle_to_string",
    "rle_from_string",
    "rle_to_json",
    "rle_from_json",
    "rle_area",
    "mask_iou",
    "bbox_of",
    "box_iou",
    "resize_prob",
    "connected_components",
    "correct_mask",
]

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


class CodecError(ValueError):
    """Raised for malformed or inconsistent run-length data."""


@dataclass(frozen=True)
class Rle:
    """Run-length encoded binary mask (COCO layout)."""

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise CodecError(f"invalid mask size {self.height}x{self.width}")
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts:
            raise CodecError("empty counts")
        if any(c < 0 for c in counts):
            raise CodecError("negative run length")
        if any(c == 0 for c in counts[1:]):
            raise CodecError("zero-length run after the leading run")

    @property
    def size(self) -> tuple[int, int]:
        return self.height, self.width


class BBox(NamedTuple):
    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h


class Component(NamedTuple):
    component_id: int
    pixel_count: int
    pixels: np.ndarray  # sorted row-major flat indices


def as_binary(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D mask, got shape {m.shape}")
    return m.astype(bool, copy=False)


def as_probability(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D map, got shape {p.shape}")
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise ValueError("probabilities must lie in [0, 1]")
    return p


def threshold(probs: np.ndarray, level: float = 0.5) -> np.ndarray:
    """Binarize a probability map; cells ``>= level`` become foreground."""
    return np.asarray(probs) >= level


# ---------------------------------------------------------------------------
# run-length codecs
# ---------------------------------------------------------------------------

def rle_encode(mask) -> Rle:
    m = as_binary(mask)
    h, w = m.shape
    flat = m.ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return Rle(h, w, tuple(counts))


def rle_decode(rle: Rle) -> np.ndarray:
    total = sum(rle.counts)
    if total != rle.height * rle.width:
        raise CodecError(
            f"counts sum to {total}, expected {rle.height * rle.width}"
        )
    values = np.zeros(len(rle.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, rle.counts)
    return flat.reshape((rle.width, rle.height)).T.copy()


def rle_area(rle: Rle) -> int:
    return int(sum(rle.counts[1::2]))


def rle_to_string(rle: Rle) -> bytes:
    """Compress counts into the COCO ASCII form.

    Each count from the fourth onwards is stored as a difference against the
    count two places earlier, then emitted as 5-bit little-endian groups with a
    continuation flag (0x20), each offset by ``ord('0')``.
    """
    out = bytearray()
    cnts = rle.counts
    for i, c in enumerate(cnts):
        x = c - cnts[i - 2] if i > 2 else c
        more = True
        while more:
            chunk = x & 0x1F
            x >>= 5
            more = x != -1 if chunk & 0x10 else x != 0
            if more:
                chunk |= 0x20
            out.append(chunk + 48)
    return bytes(out)


def rle_from_string(s: bytes | str, width: int, height: int) -> Rle:
    data = s.encode("ascii") if isinstance(s, str) else bytes(s)
    counts: list[int] = []
    p = 0
    while p < len(data):
        x = 0
        k = 0
        more = True
        while more:
            if p >= len(data):
                raise CodecError("truncated chunk stream")
            c = data[p] - 48
            if not 0 <= c < 64:
                raise CodecError(f"invalid character {data[p]!r} at offset {p}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and c & 0x10:
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        if x < 0:
            raise CodecError(f"negative run length at run {len(counts)}")
        counts.append(x)
    rle = Rle(height, width, tuple(counts))
    if sum(counts) != width * height:
        raise CodecError(f"counts sum to {sum(counts)}, expected {width * height}")
    return rle


def rle_to_json(rle: Rle, compressed: bool = True) -> dict:
    counts = rle_to_string(rle).decode("ascii") if compressed else list(rle.counts)
    return {"size": [rle.height, rle.width], "counts": counts}


def rle_from_json(obj: dict) -> Rle:
    try:
        h, w = (int(v) for v in obj["size"])
        counts = obj["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CodecError(f"malformed RLE object: {exc}") from exc
    if isinstance(counts, (str, bytes)):
        return rle_from_string(counts, w, h)
    if not isinstance(counts, list) or not all(
        isinstance(c, int) and not isinstance(c, bool) for c in counts
    ):
        raise CodecError("RLE counts must be a string or a list of integers")
    rle = Rle(h, w, tuple(counts))
    if sum(counts) != w * h:
        raise CodecError(f"counts sum to {sum(counts)}, expected {w * h}")
    return rle


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def mask_iou(a, b) -> float:
    """Intersection over union; two empty masks give 0."""
    a = as_binary(a)
    b = as_binary(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def bbox_of(mask) -> BBox:
    m = as_binary(mask)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return BBox(0, 0, 0, 0)
    cols = np.flatnonzero(m.any(axis=0))
    return BBox(
        int(cols[0]),
        int(rows[0]),
        int(cols[-1] - cols[0] + 1),
        int(rows[-1] - rows[0] + 1),
    )


def box_iou(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(iw, 0) * max(ih, 0)
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def _axis_weights(src: int, dst: int):
    # corner-aligned: target j samples source coordinate j*(src-1)/(dst-1)
    if src == 1 or dst == 1:
        zeros = np.zeros(dst, dtype=np.intp)
        return zeros, zeros, np.zeros(dst)
    pos = np.arange(dst) * (src - 1) / (dst - 1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), src - 1)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, pos - i0


def resize_prob(probs, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resampling with corner-aligned coordinates.

    A one-pixel source or target axis degenerates to nearest sampling of the
    first row/column.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target size must be positive, got {new_w}x{new_h}")
    p = np.asarray(probs, dtype=np.float64)
    h, w = p.shape
    if (h, w) == (new_h, new_w):
        return p.copy()
    r0, r1, tr = _axis_weights(h, new_h)
    rows = p[r0] + tr[:, None] * (p[r1] - p[r0])
    c0, c1, tc = _axis_weights(w, new_w)
    out = rows[:, c0] + tc[None, :] * (rows[:, c1] - rows[:, c0])
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# components and correction
# ---------------------------------------------------------------------------

def _ordered_components(labels: np.ndarray, n: int) -> list[Component]:
    if n == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_labels = flat[order]
    starts = np.searchsorted(sorted_labels, np.arange(1, n + 2))
    groups = []
    for lab in range(1, n + 1):
        pix = order[starts[lab - 1]:starts[lab]]
        groups.append(pix)
    # pixels within a label are already ascending thanks to the stable sort
    groups.sort(key=lambda g: (-g.size, g[0]))
    return [Component(i, int(g.size), g) for i, g in enumerate(groups)]


def connected_components(mask) -> list[Component]:
    """8-connected foreground components, largest first.

    Ties in size are broken by the component's first pixel in row-major
    order.
    """
    m = as_binary(mask)
    labels, n = ndimage.label(m, structure=_EIGHT)
    return _ordered_components(labels, n)


def _enclosed_background(m: np.ndarray) -> list[np.ndarray]:
    labels, n = ndimage.label(~m, structure=_FOUR)
    if n == 0:
        return []
    border = np.unique(
        np.concatenate((labels[0], labels[-1], labels[:, 0], labels[:, -1]))
    )
    holes = []
    for comp in _ordered_components(labels, n):
        lab = labels.flat[comp.pixels[0]]
        if lab not in border:
            holes.append(comp.pixels)
    return holes


def _correct_once(m: np.ndarray, speckle_fraction: float, hole_fraction: float):
    comps = connected_components(m)
    if not comps:
        return m
    largest = comps[0].pixel_count
    out = np.zeros(m.size, dtype=bool)
    for comp in comps:
        if comp.pixel_count >= speckle_fraction * largest:
            out[comp.pixels] = True
    out = out.reshape(m.shape)
    for hole in _enclosed_background(out):
        if hole.size < hole_fraction * largest:
            out.flat[hole] = True
    return out


def correct_mask(
    mask, speckle_fraction: float = 0.05, hole_fraction: float = 0.05
) -> np.ndarray:
    """Drop small foreground islands and fill small enclosed holes.

    Thresholds are relative to the largest 8-connected foreground component.
    Holes are 4-connected background regions that do not reach the border.
    The pass repeats until the mask stops changing, so the result is a fixed
    point.
    """
    if not (0.0 <= speckle_fraction < 1.0 and 0.0 <= hole_fraction < 1.0):
        raise ValueError("fractions must lie in [0, 1)")
    m = as_binary(mask).copy()
    for _ in range(64):
        nxt = _correct_once(m, speckle_fraction, hole_fraction)
        if np.array_equal(nxt, m):
            return nxt
        m = nxt
    raise RuntimeError("mask correction did not converge")
