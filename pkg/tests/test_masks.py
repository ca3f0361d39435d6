import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maskrefine.masks import (
    BBox,
    CodecError,
    Rle,
    bbox_of,
    connected_components,
    correct_mask,
    mask_iou,
    resize_prob,
    rle_decode,
    rle_encode,
    rle_from_json,
    rle_from_string,
    rle_to_json,
    rle_to_string,
)

from oracles import bilinear_resize_pointwise, coco_string, flood_components, runs_column_major

masks = st.integers(1, 20).flatmap(
    lambda h: st.integers(1, 20).flatmap(lambda w: arrays(bool, (h, w)))
)


# -- run-length encoding ----------------------------------------------------

def test_encode_empty():
    assert rle_encode(np.zeros((2, 2), bool)).counts == (4,)


def test_encode_full():
    assert rle_encode(np.ones((3, 3), bool)).counts == (0, 9)


def test_encode_left_column():
    m = np.array([[1, 0], [1, 0]], bool)
    assert rle_encode(m).counts == (0, 2, 2)


def test_decode_examples():
    assert not rle_decode(Rle(2, 2, (4,))).any()
    np.testing.assert_array_equal(rle_decode(Rle(2, 2, (0, 2, 2))), [[1, 0], [1, 0]])
    np.testing.assert_array_equal(rle_decode(Rle(2, 2, (3, 1))), [[0, 0], [0, 1]])


def test_decode_rejects_wrong_total():
    with pytest.raises(CodecError):
        rle_decode(Rle(2, 2, (3,)))


@pytest.mark.parametrize("counts", [(1, 0, 3), (-1, 5), ()])
def test_rle_invariants(counts):
    with pytest.raises(CodecError):
        Rle(2, 2, counts)


@given(masks)
def test_encode_matches_loop_oracle(m):
    assert list(rle_encode(m).counts) == runs_column_major(m.tolist())


@given(masks)
def test_encode_decode_roundtrip(m):
    np.testing.assert_array_equal(rle_decode(rle_encode(m)), m)


@given(masks)
def test_string_roundtrip(m):
    rle = rle_encode(m)
    assert rle_from_string(rle_to_string(rle), rle.width, rle.height) == rle


@given(masks)
def test_string_matches_reference(m):
    rle = rle_encode(m)
    assert rle_to_string(rle).decode() == coco_string(list(rle.counts))


def test_string_empty_example():
    rle = Rle(2, 2, (4,))
    assert rle_from_string(rle_to_string(rle), 2, 2).counts == (4,)


def test_string_matches_pycocotools():
    cocomask = pytest.importorskip("pycocotools.mask")
    rng = np.random.default_rng(7)
    for _ in range(50):
        h, w = rng.integers(1, 49, size=2)
        m = rng.random((h, w)) < rng.uniform(0.05, 0.95)
        ref = cocomask.encode(np.asfortranarray(m.astype(np.uint8)))
        assert rle_to_string(rle_encode(m)) == ref["counts"]
        assert rle_from_string(ref["counts"], w, h) == rle_encode(m)


@pytest.mark.parametrize("bad", [b"\x20", b"0a", b"o"])
def test_string_malformed(bad):
    # space is below the alphabet; 'a' and 'o' set the continuation bit and
    # then the stream ends
    with pytest.raises(CodecError):
        rle_from_string(bad, 2, 2)


def test_json_forms():
    m = np.array([[0, 1, 1], [1, 1, 0]], bool)
    rle = rle_encode(m)
    obj = rle_to_json(rle)
    assert obj["size"] == [2, 3]
    assert isinstance(obj["counts"], str)
    assert rle_from_json(obj) == rle
    assert rle_from_json(rle_to_json(rle, compressed=False)) == rle
    with pytest.raises(CodecError):
        rle_from_json({"size": [2, 3], "counts": [1, 2]})
    with pytest.raises(CodecError):
        rle_from_json({"counts": [6]})


# -- IoU and boxes -----------------------------------------------------------

def test_iou_examples():
    a = np.zeros((4, 4), bool)
    a[0, :4] = True
    b = np.zeros((4, 4), bool)
    b[0, 2:4] = True
    b[1, 0:2] = True
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, b) == pytest.approx(2 / 6)
    c = np.zeros((4, 4), bool)
    c[3, 3] = True
    assert mask_iou(a, c) == 0.0
    assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0
    with pytest.raises(ValueError):
        mask_iou(np.zeros((2, 2)), np.zeros((2, 3)))


@given(masks.flatmap(lambda m: st.tuples(st.just(m), arrays(bool, m.shape))))
def test_iou_properties(pair):
    a, b = pair
    v = mask_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == mask_iou(b, a)
    if a.any():
        assert mask_iou(a, a) == 1.0


def test_bbox_examples():
    m = np.zeros((6, 7), bool)
    m[2, 3] = True
    assert bbox_of(m) == BBox(3, 2, 1, 1)
    assert bbox_of(np.ones((4, 5))) == BBox(0, 0, 5, 4)
    m = np.zeros((6, 7), bool)
    m[0, 0] = m[4, 5] = True
    assert bbox_of(m) == BBox(0, 0, 6, 5)
    assert bbox_of(np.zeros((3, 3))) == BBox(0, 0, 0, 0)


# -- resampling --------------------------------------------------------------

def test_resize_examples():
    p = np.array([[0.2, 0.9], [0.4, 0.1]])
    np.testing.assert_array_equal(resize_prob(p, 2, 2), p)
    np.testing.assert_allclose(resize_prob(np.array([[0.0, 1.0]]), 3, 1), [[0.0, 0.5, 1.0]])


@settings(max_examples=50)
@given(
    st.floats(0, 1),
    st.integers(1, 9),
    st.integers(1, 9),
    st.integers(1, 30),
    st.integers(1, 30),
)
def test_resize_keeps_constants(v, h, w, nh, nw):
    out = resize_prob(np.full((h, w), v), nw, nh)
    assert out.shape == (nh, nw)
    assert np.all(out == v)


@settings(max_examples=50)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0, 1)),
    st.integers(1, 15),
    st.integers(1, 15),
)
def test_resize_matches_pointwise_oracle(p, nw, nh):
    out = resize_prob(p, nw, nh)
    assert np.all((out >= 0) & (out <= 1))
    np.testing.assert_allclose(out, bilinear_resize_pointwise(p.tolist(), nw, nh), atol=1e-12)


# -- components ---------------------------------------------------------------

def test_components_examples():
    blob = np.zeros((5, 5), bool)
    blob[1:4, 1:4] = True
    assert len(connected_components(blob)) == 1
    assert connected_components(np.zeros((3, 3))) == []
    diag = np.array([[1, 0], [0, 1]], bool)
    comps = connected_components(diag)
    assert len(comps) == 1 and comps[0].pixel_count == 2


def test_components_order_ties_by_first_pixel():
    m = np.zeros((3, 5), bool)
    m[0, 4] = True
    m[2, 0] = True
    comps = connected_components(m)
    assert [c.pixels.tolist() for c in comps] == [[4], [10]]


@given(masks)
def test_components_match_flood_fill(m):
    comps = connected_components(m)
    expect = flood_components(m.tolist())
    assert [c.pixels.tolist() for c in comps] == expect
    assert [c.component_id for c in comps] == list(range(len(comps)))
    seen = np.zeros(m.size, int)
    for c in comps:
        seen[c.pixels] += 1
    np.testing.assert_array_equal(seen, m.ravel().astype(int))


# -- correction ---------------------------------------------------------------

def _blob(side=20):
    m = np.zeros((32, 32), bool)
    m[4:4 + side, 5:5 + side] = True
    return m


def test_correct_clean_fixed_point():
    m = _blob()
    np.testing.assert_array_equal(correct_mask(m), m)


def test_correct_removes_speckle():
    m = _blob()  # 400 px
    m[28:30, 28:30] = True  # 4 px < 0.05 * 400
    out = correct_mask(m, 0.05, 0.05)
    np.testing.assert_array_equal(out, _blob())


def test_correct_fills_hole():
    m = _blob()
    m[10, 10:12] = False
    out = correct_mask(m, 0.05, 0.05)
    np.testing.assert_array_equal(out, _blob())


def test_correct_keeps_large_hole_and_border_background():
    m = _blob()
    m[8:16, 8:16] = False  # 64 px hole, above 5% of 336
    np.testing.assert_array_equal(correct_mask(m), m)


def test_correct_empty_and_bad_fraction():
    z = np.zeros((4, 4), bool)
    np.testing.assert_array_equal(correct_mask(z), z)
    with pytest.raises(ValueError):
        correct_mask(z, 1.0, 0.0)


@settings(max_examples=60)
@given(masks)
def test_correct_idempotent_and_bounded(m):
    once = correct_mask(m)
    np.testing.assert_array_equal(correct_mask(once), once)
    # anything added must be background that was enclosed in the input
    added = once & ~m
    if added.any():
        from scipy import ndimage

        labels, _ = ndimage.label(~m)
        border = set(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]).tolist())
        assert not (set(labels[added].tolist()) & border)
