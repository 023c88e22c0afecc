import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bldgseg.upsample import make_interp_filter, upsample_bilinear, upsample_vjp
from oracles import interp_direct_2d, numeric_grad, rel_error


def test_filter_taps():
    np.testing.assert_array_equal(make_interp_filter(0).taps, [1.0])
    np.testing.assert_allclose(make_interp_filter(1).taps, [1 / 2, 1, 1 / 2], rtol=0, atol=0)
    np.testing.assert_allclose(make_interp_filter(2).taps, [1 / 3, 2 / 3, 1, 2 / 3, 1 / 3], rtol=0, atol=1e-16)
    with pytest.raises(ValueError):
        make_interp_filter(-1)


@pytest.mark.parametrize("n", range(0, 9))
def test_filter_properties(n):
    t = make_interp_filter(n).taps
    assert len(t) == 2 * n + 1
    assert t[n] == 1.0
    np.testing.assert_array_equal(t, t[::-1])
    assert t.sum() == pytest.approx(n + 1, abs=1e-12)


def test_factor_one_identity():
    x = np.random.default_rng(0).normal(size=(4, 5, 2))
    np.testing.assert_array_equal(upsample_bilinear(x, 1), x)
    np.testing.assert_array_equal(upsample_vjp(x, 1), x)


def test_midpoint_1d():
    x = np.array([[2.0, 4.0]])[..., None]
    y = upsample_bilinear(x, 2)
    # columns before edge extension: 2, 3, 4; then the last is replicated
    np.testing.assert_array_equal(y[0, :, 0], [2, 3, 4, 4])
    np.testing.assert_array_equal(y[1, :, 0], [2, 3, 4, 4])


def test_rejects_bad_factor():
    with pytest.raises(ValueError):
        upsample_bilinear(np.zeros((2, 2, 1)), 0)
    with pytest.raises(ValueError):
        upsample_vjp(np.zeros((4, 4, 1)), 0)
    with pytest.raises(ValueError):
        upsample_vjp(np.zeros((5, 4, 1)), 2)


@pytest.mark.parametrize("factor", [2, 4, 8])
def test_interior_matches_direct_interpolation(factor):
    m = np.random.default_rng(factor).normal(size=(5, 7))
    y = upsample_bilinear(m[..., None], factor)[..., 0]
    core = (5 - 1) * factor + 1, (7 - 1) * factor + 1
    assert y.shape == (5 * factor, 7 * factor)
    np.testing.assert_allclose(y[:core[0], :core[1]], interp_direct_2d(m, factor), rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.integers(1, 8), w=st.integers(1, 8),
       factor=st.sampled_from([1, 2, 3, 4, 8]))
def test_original_samples_unchanged(seed, h, w, factor):
    x = np.random.default_rng(seed).normal(size=(h, w, 2))
    y = upsample_bilinear(x, factor)
    np.testing.assert_array_equal(y[::factor, ::factor], x)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-100, 100), h=st.integers(1, 6), w=st.integers(1, 6), factor=st.sampled_from([2, 4, 8]))
def test_constant_stays_constant(c, h, w, factor):
    y = upsample_bilinear(np.full((h, w, 1), c), factor)
    np.testing.assert_allclose(y, c, rtol=0, atol=1e-12 * max(1, abs(c)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.integers(1, 8), w=st.integers(1, 8),
       factor=st.sampled_from([2, 3, 4, 8]))
def test_adjoint_identity(seed, h, w, factor):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(h, w, 2))
    u = rng.normal(size=(h * factor, w * factor, 2))
    lhs = float((u * upsample_bilinear(x, factor)).sum())
    rhs = float((upsample_vjp(u, factor) * x).sum())
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_vjp_zero_and_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 3, 2))
    assert not upsample_vjp(np.zeros((8, 6, 2)), 2).any()
    u = rng.normal(size=(8, 6, 2))
    num = numeric_grad(lambda: float((u * upsample_bilinear(x, 2)).sum()), x)
    assert rel_error(upsample_vjp(u, 2), num) < 1e-6
