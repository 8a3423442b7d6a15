"""Tensor containers and the mask algebra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmsparse.errors import ShapeMismatchError
from nmsparse.sparsity import NMPattern, nm_project
from nmsparse.tensors import FeatureMap, Mask4, Tensor4, apply_mask, count_nonzero_mask, subset_of


def test_tensor4_requires_four_axes():
    with pytest.raises(ShapeMismatchError):
        Tensor4(np.zeros((2, 3, 4)))


def test_tensor4_rejects_non_finite():
    bad = np.zeros((1, 1, 2, 2))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Tensor4(bad)
    bad[0, 0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        Tensor4(bad)


def test_tensor4_casts_int_input_to_float():
    t = Tensor4(np.ones((1, 1, 1, 1), dtype=np.int64))
    assert t.dtype == np.float64


def test_mask4_rejects_non_binary_entries():
    with pytest.raises(ValueError):
        Mask4(np.full((1, 1, 1, 1), 2))
    with pytest.raises(ValueError):
        Mask4(np.full((1, 1, 1, 1), 0.5))


def test_mask4_accepts_bool():
    m = Mask4(np.ones((1, 2, 1, 1), dtype=bool))
    assert m.data.dtype == np.uint8
    assert count_nonzero_mask(m) == 2


def test_apply_mask_hand_values():
    w = Tensor4(np.array([0.1, -0.5, 0.3, -0.2]).reshape(1, 4, 1, 1))
    b = Mask4(np.array([0, 1, 1, 0]).reshape(1, 4, 1, 1))
    out = apply_mask(w, b)
    assert np.array_equal(out.data.ravel(), np.array([0.0, -0.5, 0.3, 0.0]))


def test_apply_mask_all_ones_is_identity():
    w = Tensor4(np.arange(24, dtype=np.float64).reshape(2, 3, 2, 2))
    assert np.array_equal(apply_mask(w, Mask4.ones(w.shape)).data, w.data)


def test_apply_mask_all_zeros_annihilates():
    w = Tensor4(np.random.default_rng(0).standard_normal((2, 3, 2, 2)))
    assert np.all(apply_mask(w, Mask4.zeros(w.shape)).data == 0)


def test_apply_mask_shape_mismatch_names_both_shapes():
    w = Tensor4(np.zeros((2, 3, 2, 2)))
    b = Mask4.ones((2, 3, 3, 3))
    with pytest.raises(ShapeMismatchError) as err:
        apply_mask(w, b)
    assert "(2, 3, 2, 2)" in str(err.value)
    assert "(2, 3, 3, 3)" in str(err.value)


def test_count_nonzero_examples():
    assert count_nonzero_mask(Mask4.ones((2, 3, 2, 3))) == 36
    assert count_nonzero_mask(Mask4.zeros((2, 3, 2, 3))) == 0
    # a valid 1:4 mask on (4, 8, 3, 3) keeps 4*2*9 = 72 weights
    w = Tensor4(np.random.default_rng(1).standard_normal((4, 8, 3, 3)))
    assert count_nonzero_mask(nm_project(w, NMPattern(1, 4))) == 72


def test_subset_of_basics():
    shape = (2, 4, 3, 3)
    zeros, ones = Mask4.zeros(shape), Mask4.ones(shape)
    assert subset_of(zeros, ones)
    assert subset_of(zeros, zeros)
    assert subset_of(ones, ones)
    assert not subset_of(ones, zeros)


def test_subset_of_single_violation():
    a = Mask4.zeros((1, 2, 1, 1))
    a.data[0, 1, 0, 0] = 1
    b = Mask4.zeros((1, 2, 1, 1))
    b.data[0, 0, 0, 0] = 1
    assert not subset_of(a, b)


def test_subset_of_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        subset_of(Mask4.zeros((1, 1, 1, 1)), Mask4.zeros((1, 1, 2, 2)))


def test_featuremap_requires_four_axes():
    with pytest.raises(ShapeMismatchError):
        FeatureMap(np.zeros((3, 3)))


@st.composite
def mask_pair(draw):
    shape = (
        draw(st.integers(1, 4)),
        draw(st.integers(1, 6)),
        draw(st.integers(1, 3)),
        draw(st.integers(1, 3)),
    )
    bits_b = draw(st.lists(st.integers(0, 1), min_size=int(np.prod(shape)), max_size=int(np.prod(shape))))
    bits_a = draw(st.lists(st.integers(0, 1), min_size=int(np.prod(shape)), max_size=int(np.prod(shape))))
    b = np.array(bits_b, dtype=np.uint8).reshape(shape)
    a = np.array(bits_a, dtype=np.uint8).reshape(shape) & b  # a is b thinned out
    return Mask4(a), Mask4(b)


@given(mask_pair())
@settings(max_examples=50, deadline=None)
def test_subset_implies_count_monotone(pair):
    a, b = pair
    assert subset_of(a, b)
    assert count_nonzero_mask(a) <= count_nonzero_mask(b)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_apply_mask_idempotent(seed):
    rng = np.random.default_rng(seed)
    w = Tensor4(rng.standard_normal((2, 4, 3, 3)))
    b = Mask4(rng.integers(0, 2, size=(2, 4, 3, 3), dtype=np.uint8))
    once = apply_mask(w, b)
    twice = apply_mask(once, b)
    assert np.array_equal(once.data, twice.data)
