import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from swdo.wavelet import OddDimensionError, SubbandSet, dwt2_forward, dwt2_inverse, subband_concat, \
    subband_concat_adjoint


def even_planes(max_half=8):
    shapes = st.tuples(st.integers(1, max_half), st.integers(1, max_half)).map(lambda s: (2 * s[0], 2 * s[1]))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=st.floats(-1e3, 1e3)))


def test_block_example():
    s = dwt2_forward([[1, 2], [3, 4]])
    assert (s.ll[0, 0], s.lh[0, 0], s.hl[0, 0], s.hh[0, 0]) == (5.0, -1.0, -2.0, 0.0)


def test_constant_plane():
    s = dwt2_forward(np.full((4, 4), 3.0))
    np.testing.assert_array_equal(s.ll, np.full((2, 2), 6.0))
    for band in (s.lh, s.hl, s.hh):
        np.testing.assert_array_equal(band, 0.0)


def test_constant_inverse():
    z = np.zeros((2, 2))
    np.testing.assert_array_equal(dwt2_inverse(SubbandSet(np.full((2, 2), 4.0), z, z, z)), np.full((4, 4), 2.0))


def test_small_round_trip():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(dwt2_inverse(dwt2_forward(x)), x)


def test_energy_random_8x8():
    x = np.random.default_rng(0).normal(size=(8, 8))
    e = sum(dwt2_forward(x).energies().values())
    assert abs(e - np.sum(x * x)) < 1e-9


def test_round_trip_64x64():
    x = np.random.default_rng(1).normal(size=(64, 64))
    assert np.max(np.abs(dwt2_inverse(dwt2_forward(x)) - x)) < 1e-10


@pytest.mark.parametrize("shape,axis", [((3, 4), "height"), ((4, 5), "width")])
def test_odd_dimension_named(shape, axis):
    with pytest.raises(OddDimensionError, match=axis) as err:
        dwt2_forward(np.zeros(shape))
    assert err.value.axis == axis


def test_mismatched_subbands():
    with pytest.raises(ValueError):
        SubbandSet(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))


def test_concat_shapes():
    out = subband_concat(np.random.default_rng(0).random((3, 8, 8)))
    assert out.shape == (12, 4, 4)


def test_concat_constant_channel():
    out = subband_concat(np.full((1, 4, 4), 0.25))
    np.testing.assert_array_equal(out[0], 0.5)
    np.testing.assert_array_equal(out[1:], 0.0)


def test_concat_empty():
    assert subband_concat(np.zeros((0, 4, 4))).shape == (0, 4, 4)


def test_concat_band_order():
    x = np.random.default_rng(3).random((2, 4, 6))
    out = subband_concat(x)
    for c in range(2):
        s = dwt2_forward(x[c])
        for b, band in enumerate(s.bands()):
            np.testing.assert_allclose(out[2 * b + c], band, atol=1e-15)


def test_concat_odd_propagates():
    with pytest.raises(OddDimensionError):
        subband_concat(np.zeros((2, 5, 4)))


def test_concat_keeps_float32():
    assert subband_concat(np.zeros((1, 4, 4), np.float32)).dtype == np.float32


@settings(max_examples=60)
@given(even_planes())
def test_reconstruction_property(x):
    np.testing.assert_allclose(dwt2_inverse(dwt2_forward(x)), x, atol=1e-10, rtol=0)


@settings(max_examples=60)
@given(even_planes())
def test_energy_property(x):
    total = np.sum(x * x)
    e = sum(dwt2_forward(x).energies().values())
    assert abs(e - total) <= 1e-9 * max(total, 1.0)


@settings(max_examples=40)
@given(even_planes(4), st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**32))
def test_linearity(x, alpha, beta, seed):
    y = np.random.default_rng(seed).normal(size=x.shape)
    lhs = dwt2_forward(alpha * x + beta * y).bands()
    fx, fy = dwt2_forward(x).bands(), dwt2_forward(y).bands()
    for band, bx, by in zip(lhs, fx, fy):
        np.testing.assert_allclose(band, alpha * bx + beta * by, atol=1e-8 * (1 + np.abs(x).max()) * 20)


@given(st.integers(1, 6), st.integers(1, 6), st.floats(-1e6, 1e6))
def test_constant_kill(h, w, c):
    s = dwt2_forward(np.full((2 * h, 2 * w), c))
    for band in (s.lh, s.hl, s.hh):
        assert np.all(band == 0.0)


@settings(max_examples=30)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32))
def test_concat_adjoint_identity(channels, half, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, channels, 2 * half, 2 * half))
    g = rng.normal(size=(2, 4 * channels, half, half))
    assert np.sum(subband_concat(x) * g) == pytest.approx(np.sum(x * subband_concat_adjoint(g)), rel=1e-10, abs=1e-10)
    np.testing.assert_allclose(subband_concat_adjoint(subband_concat(x)), x, atol=1e-12)
