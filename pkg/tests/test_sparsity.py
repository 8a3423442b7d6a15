"""Mask construction rules: magnitude pruning, n:m projection, spatial profiles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmsparse.errors import ConfigError, MaskConstraintError, ShapeMismatchError
from nmsparse.sparsity import (
    NMPattern,
    SparsityProfile,
    check_nm,
    magnitude_mask,
    nm_project,
    round_half_up,
    spatial_sparsity,
    require_nm,
    uniform_spatial_mask,
)
from nmsparse.tensors import Mask4, Tensor4, count_nonzero_mask


def test_round_half_up():
    assert round_half_up(0.0) == 0
    assert round_half_up(0.4999) == 0
    assert round_half_up(0.5) == 1
    assert round_half_up(1.5) == 2
    assert round_half_up(2.5) == 3
    assert round_half_up(2.49) == 2


def test_pattern_validation_and_sparsity():
    assert NMPattern(2, 4).sparsity == 0.5
    assert NMPattern(1, 16).sparsity == 1 - 1 / 16
    assert str(NMPattern(1, 4)) == "1:4"
    with pytest.raises(ConfigError):
        NMPattern(0, 4)
    with pytest.raises(ConfigError):
        NMPattern(5, 4)


def test_pattern_divisibility_error_names_layer():
    with pytest.raises(ConfigError) as e:
        NMPattern(2, 4).check_divides(6, "stem")
    assert "stem" in str(e.value)
    assert "6" in str(e.value)


def test_magnitude_mask_hand_case():
    # Magnitudes 0.1 0.9 0.5 0.05 at 50% sparsity: prune the two smallest.
    w = Tensor4(np.array([0.1, -0.9, 0.5, 0.05]).reshape(1, 4, 1, 1))
    m = magnitude_mask(w, 0.5)
    assert np.array_equal(m.data.ravel(), [0, 1, 1, 0])


def test_magnitude_mask_zero_sparsity_keeps_all():
    w = Tensor4(np.zeros((2, 3, 1, 1)))
    assert count_nonzero_mask(magnitude_mask(w, 0.0)) == 6


def test_magnitude_mask_tie_rule_prunes_lowest_flat_index():
    # All-equal magnitudes: pruning must take the earliest flat entries.
    w = Tensor4(np.ones((1, 6, 1, 1)))
    m = magnitude_mask(w, 0.5)
    assert np.array_equal(m.data.ravel(), [0, 0, 0, 1, 1, 1])


def test_magnitude_mask_count_uses_round_half_up():
    w = Tensor4(np.arange(1, 7, dtype=float).reshape(1, 6, 1, 1))
    # 0.25 * 6 = 1.5 -> prune 2
    assert count_nonzero_mask(magnitude_mask(w, 0.25)) == 4


def test_magnitude_mask_rejects_bad_sparsity():
    w = Tensor4(np.ones((1, 1, 1, 1)))
    with pytest.raises(ConfigError):
        magnitude_mask(w, 1.0)
    with pytest.raises(ConfigError):
        magnitude_mask(w, -0.1)


def test_nm_project_hand_case():
    # One group of four channels; keep the two largest magnitudes.
    w = Tensor4(np.array([0.3, -1.2, 0.7, 0.1]).reshape(1, 4, 1, 1))
    m = nm_project(w, NMPattern(2, 4))
    assert np.array_equal(m.data.ravel(), [0, 1, 1, 0])


def test_nm_project_tie_rule_keeps_lowest_channel():
    w = Tensor4(np.array([0.5, 0.5, 0.5, 0.5]).reshape(1, 4, 1, 1))
    m = nm_project(w, NMPattern(2, 4))
    assert np.array_equal(m.data.ravel(), [1, 1, 0, 0])


def test_nm_project_independent_per_offset_and_row():
    rng = np.random.default_rng(0)
    w = Tensor4(rng.standard_normal((4, 8, 3, 3)))
    m = nm_project(w, NMPattern(1, 4))
    counts = m.data.reshape(4, 2, 4, 3, 3).sum(axis=2)
    assert np.all(counts == 1)
    assert count_nonzero_mask(m) == 4 * 2 * 3 * 3  # 72 survivors


def test_nm_project_keeps_largest_in_each_group():
    rng = np.random.default_rng(1)
    w = Tensor4(rng.standard_normal((2, 8, 2, 2)))
    m = nm_project(w, NMPattern(1, 4))
    a = np.abs(w.data).reshape(2, 2, 4, 2, 2)
    kept = (m.data.reshape(2, 2, 4, 2, 2) * a).max(axis=2)
    assert np.allclose(kept, a.max(axis=2))


def test_nm_project_divisibility():
    w = Tensor4(np.ones((1, 6, 1, 1)))
    with pytest.raises(ConfigError):
        nm_project(w, NMPattern(2, 4))


def test_check_and_require_nm():
    p = NMPattern(1, 4)
    good = Mask4(np.array([1, 0, 0, 0]).reshape(1, 4, 1, 1))
    bad = Mask4(np.array([1, 1, 0, 0]).reshape(1, 4, 1, 1))
    assert check_nm(good, p)
    assert not check_nm(bad, p)
    assert not check_nm(Mask4(np.ones((1, 6, 1, 1), dtype=np.uint8)), p)  # indivisible
    require_nm(good, p)
    with pytest.raises(MaskConstraintError) as e:
        require_nm(bad, p, "s1b0")
    assert "s1b0" in str(e.value)
    assert "1:4" in str(e.value)


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from([(2, 4), (1, 4), (1, 16)]),
    st.integers(1, 6),
    st.integers(1, 3),
    st.sampled_from([1, 3]),
    st.integers(0, 2**32 - 1),
)
def test_nm_project_always_exact_n_per_group(nm, c_out, groups, k, seed):
    n, m = nm
    rng = np.random.default_rng(seed)
    w = Tensor4(rng.standard_normal((c_out, groups * m, k, k)))
    mask = nm_project(w, NMPattern(n, m))
    assert check_nm(mask, NMPattern(n, m))
    assert count_nonzero_mask(mask) == c_out * groups * n * k * k


def test_spatial_sparsity_hand_case():
    mask = Mask4(
        np.array(
            [
                [[1, 1], [0, 0]],
                [[1, 0], [0, 1]],
            ],
            dtype=np.uint8,
        ).reshape(1, 2, 2, 2)
    )
    prof = spatial_sparsity(mask, "demo")
    # offset (0,0): both kept -> 0; (0,1): one kept -> 0.5; (1,0): none -> 1; (1,1): one -> 0.5
    assert np.allclose(prof.values, [[0.0, 0.5], [1.0, 0.5]])
    assert prof.layer_name == "demo"
    rows = list(prof.rows())
    assert rows[0] == ("demo", 0, 0, 0.0)
    assert rows[2] == ("demo", 1, 0, 1.0)
    assert len(rows) == 4


def test_spatial_sparsity_of_nm_mask_is_exact_constant():
    # Every (u, v) plane of an n:m mask has exactly n/m density, so the profile
    # equals 1 - n/m everywhere, exactly.
    for n, m in [(2, 4), (1, 4), (1, 16)]:
        rng = np.random.default_rng(100 * n + m)
        w = Tensor4(rng.standard_normal((8, 2 * m, 3, 3)))
        prof = spatial_sparsity(nm_project(w, NMPattern(n, m)))
        assert np.all(prof.values == 1.0 - n / m)


def test_profile_requires_2d():
    with pytest.raises(ShapeMismatchError):
        SparsityProfile("x", np.zeros(3))


def test_uniform_spatial_mask_flat_profile():
    rng = np.random.default_rng(2)
    w = Tensor4(rng.standard_normal((8, 16, 3, 3)))
    m = uniform_spatial_mask(w, 15 / 16)
    prof = spatial_sparsity(m)
    assert prof.values.max() - prof.values.min() == 0.0
    # keep = round_half_up(128 / 16) = 8 per offset
    assert np.all(m.data.sum(axis=(0, 1)) == 8)


def test_uniform_spatial_mask_keeps_largest_per_offset():
    rng = np.random.default_rng(3)
    w = Tensor4(rng.standard_normal((4, 4, 2, 2)))
    m = uniform_spatial_mask(w, 0.75)
    a = np.abs(w.data).reshape(16, 2, 2)
    md = m.data.reshape(16, 2, 2)
    for u in range(2):
        for v in range(2):
            kept = np.sort(a[:, u, v][md[:, u, v] == 1])
            top = np.sort(a[:, u, v])[-4:]
            assert np.allclose(kept, top)


def test_uniform_spatial_mask_rejects_bad_sparsity():
    with pytest.raises(ConfigError):
        uniform_spatial_mask(Tensor4(np.ones((1, 1, 1, 1))), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.95))
def test_magnitude_mask_count_property(seed, sparsity):
    rng = np.random.default_rng(seed)
    w = Tensor4(rng.standard_normal((3, 8, 2, 2)))
    m = magnitude_mask(w, sparsity)
    assert count_nonzero_mask(m) == w.size - round_half_up(sparsity * w.size)
