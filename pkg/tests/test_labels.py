import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bldgseg.labels import (
    LabelField,
    expectation_decode,
    one_hot,
    quantize,
    signed_distance_transform,
    threshold_readout,
)
from oracles import brute_sdt

masks = st.tuples(st.integers(1, 24), st.integers(1, 24)).flatmap(
    lambda hw: arrays(np.uint8, hw, elements=st.integers(0, 1)))


def test_empty_mask_is_degenerate():
    np.testing.assert_array_equal(signed_distance_transform(np.zeros((4, 6), np.uint8)), -64.0)


def test_single_pixel():
    m = np.zeros((5, 5), np.uint8)
    m[2, 2] = 1
    d = signed_distance_transform(m)
    assert d[2, 2] == 0
    for r, c in ((1, 2), (3, 2), (2, 1), (2, 3)):
        assert d[r, c] == -1
    for r, c in ((1, 1), (1, 3), (3, 1), (3, 3)):
        assert d[r, c] == -math.sqrt(2)
    np.testing.assert_array_equal(d, brute_sdt(m))


def test_solid_block():
    m = np.zeros((7, 7), np.uint8)
    m[2:5, 2:5] = 1
    d = signed_distance_transform(m)
    ring = [(r, c) for r in range(2, 5) for c in range(2, 5) if (r, c) != (3, 3)]
    assert all(d[p] == 0 for p in ring)
    assert d[3, 3] == 1
    for r, c in ((1, 3), (5, 3), (3, 1), (3, 5), (1, 2), (5, 4)):
        assert d[r, c] == -1
    np.testing.assert_array_equal(d, brute_sdt(m))


def test_image_edge_counts_as_boundary():
    d = signed_distance_transform(np.ones((3, 4), np.uint8))
    assert d[0, 0] == 0 and d[1, 1] == 1


def test_rejects_non_binary():
    with pytest.raises(ValueError):
        signed_distance_transform(np.array([[0, 2], [1, 0]]))


@settings(max_examples=60, deadline=None)
@given(masks)
def test_sdt_matches_brute_force(m):
    np.testing.assert_array_equal(signed_distance_transform(m), brute_sdt(m))


@settings(max_examples=40, deadline=None)
@given(masks)
def test_sign_consistent_with_mask(m):
    d = signed_distance_transform(m)
    if not m.any():
        return
    assert (d[m == 0] < 0).all()
    assert (d[m == 1] >= 0).all()


def test_quantize_examples():
    assert quantize(0.4) == 0
    assert quantize(200.0) == 63
    assert quantize(-200.0) == -64
    assert quantize(-0.5) == -1
    assert quantize(0.5) == 1
    assert quantize(2.5) == 3
    assert quantize(-1.49) == -1


@given(arrays(np.int64, st.integers(1, 30), elements=st.integers(-64, 63)))
def test_quantize_idempotent_in_range(v):
    np.testing.assert_array_equal(quantize(v), v)
    np.testing.assert_array_equal(quantize(quantize(v * 1.0)), v)


def test_expectation_decode_examples():
    p = np.zeros((1, 1, 128))
    p[0, 0, 74] = 1
    assert expectation_decode(p)[0, 0] == 10
    assert expectation_decode(np.full((2, 2, 128), 1 / 128)) == pytest.approx(-0.5, abs=1e-12)
    p = np.zeros((1, 1, 128))
    p[0, 0, 64] = p[0, 0, 84] = 0.5
    assert expectation_decode(p)[0, 0] == 10


def test_expectation_decode_rejects_unnormalized():
    with pytest.raises(ValueError):
        expectation_decode(np.full((1, 1, 128), 0.5))
    with pytest.raises(ValueError):
        expectation_decode(np.zeros((1, 1, 127)))


@given(arrays(np.int64, (3, 4), elements=st.integers(-64, 63)))
def test_decode_one_hot_quantized_round_trip(v):
    np.testing.assert_array_equal(expectation_decode(one_hot(quantize(v))), v)


def test_threshold_readout():
    b, e = threshold_readout(np.array([0.6, 0.0, -3.0, 0.5, -0.5]))
    np.testing.assert_array_equal(b, [True, False, False, False, False])
    np.testing.assert_array_equal(e, [False, True, False, True, True])


@settings(max_examples=40, deadline=None)
@given(masks)
def test_readout_of_exact_sdt(m):
    d = signed_distance_transform(m)
    if not m.any():
        return
    building, boundary = threshold_readout(d)
    assert (building >= (d >= 1)).all()
    # building readout = interior building pixels, boundary readout = frontier
    interior = (m == 1) & (d > 0)
    np.testing.assert_array_equal(building, interior)
    np.testing.assert_array_equal(boundary, (m == 1) & (d == 0))
    assert not (building & boundary).any()


def test_label_field_from_mask():
    m = np.zeros((7, 7), np.uint8)
    m[1:6, 1:6] = 1
    lf = LabelField.from_mask(m)
    assert lf.classes[3, 3] == 2
    assert lf.class_index.min() >= 0 and lf.class_index.max() <= 127
    np.testing.assert_array_equal(lf.classes, quantize(lf.values))
