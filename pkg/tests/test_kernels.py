"""Convolution kernels against a brute-force loop oracle, on both backends."""

import numpy as np
import pytest

from dcsf.kernels import _conv_np

BACKENDS = [pytest.param(_conv_np, id="numpy")]
try:
    from dcsf.kernels import _conv_cy
    BACKENDS.append(pytest.param(_conv_cy, id="cython"))
except ImportError:
    pass


def naive_conv1d(x, w, b, pad_left):
    """Five nested loops, zero padding outside [0, L)."""
    B, C_in, L = x.shape
    C_out, _, k = w.shape
    y = np.zeros((B, C_out, L))
    for n in range(B):
        for co in range(C_out):
            for i in range(L):
                acc = b[co]
                for ci in range(C_in):
                    for j in range(k):
                        src = i + j - pad_left
                        if 0 <= src < L:
                            acc += x[n, ci, src] * w[co, ci, j]
                y[n, co, i] = acc
    return y


@pytest.mark.parametrize("impl", BACKENDS)
def test_same_padding_hand_example(impl):
    x = np.array([[[1.0, 2.0, 3.0]]])
    w = np.array([[[1.0, 0.0, -1.0]]])
    b = np.zeros(1)
    y = impl.conv1d_forward(x, w, b, pad_left=1)
    np.testing.assert_array_equal(y[0, 0], [-2.0, -2.0, 2.0])


@pytest.mark.parametrize("impl", BACKENDS)
def test_causal_padding_hand_example(impl):
    x = np.array([[[1.0, 2.0, 3.0]]])
    w = np.array([[[1.0, 1.0]]])
    b = np.zeros(1)
    y = impl.conv1d_forward(x, w, b, pad_left=1)
    np.testing.assert_array_equal(y[0, 0], [1.0, 3.0, 5.0])


@pytest.mark.parametrize("impl", BACKENDS)
def test_bias_broadcast(impl):
    x = np.zeros((2, 3, 4))
    w = np.zeros((5, 3, 3))
    b = np.arange(5.0)
    y = impl.conv1d_forward(x, w, b, pad_left=1)
    assert y.shape == (2, 5, 4)
    for co in range(5):
        np.testing.assert_array_equal(y[:, co], np.full((2, 4), float(co)))


@pytest.mark.parametrize("impl", BACKENDS)
def test_forward_matches_naive_random_shapes(impl):
    rng = np.random.default_rng(0)
    for _ in range(40):
        B = int(rng.integers(1, 4))
        C_in = int(rng.integers(1, 5))
        C_out = int(rng.integers(1, 5))
        L = int(rng.integers(1, 12))
        k = int(rng.integers(1, 9))
        pad_left = int(rng.integers(0, k))
        x = rng.standard_normal((B, C_in, L))
        w = rng.standard_normal((C_out, C_in, k))
        b = rng.standard_normal(C_out)
        got = impl.conv1d_forward(x, w, b, pad_left)
        want = naive_conv1d(x, w, b, pad_left)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
def test_backward_matches_numeric(impl):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 7))
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(4)
    gy = rng.standard_normal((2, 4, 7))
    pad_left = 2
    gx, gw, gb = impl.conv1d_backward(x, w, gy, pad_left)

    # directional finite differences of <gy, conv(x, w, b)>
    def obj(xv, wv, bv):
        return float(np.sum(gy * impl.conv1d_forward(xv, wv, bv, pad_left)))

    h = 1e-6
    for idx, (arr, grad) in enumerate(((x, gx), (w, gw), (b, gb))):
        d = rng.standard_normal(arr.shape)
        plus = [x.copy(), w.copy(), b.copy()]
        minus = [x.copy(), w.copy(), b.copy()]
        plus[idx] = arr + h * d
        minus[idx] = arr - h * d
        num = (obj(*plus) - obj(*minus)) / (2 * h)
        np.testing.assert_allclose(np.sum(grad * d), num, rtol=1e-5, atol=1e-7)


def test_backends_agree():
    if len(BACKENDS) < 2:
        pytest.skip("cython backend not built")
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 4, 11))
    w = rng.standard_normal((6, 4, 8))
    b = rng.standard_normal(6)
    for pad_left in (0, 3, 7):
        ya = _conv_np.conv1d_forward(x, w, b, pad_left)
        yb = _conv_cy.conv1d_forward(x, w, b, pad_left)
        np.testing.assert_allclose(ya, yb, rtol=1e-12, atol=1e-12)
        gy = rng.standard_normal(ya.shape)
        for ga, gb_ in zip(_conv_np.conv1d_backward(x, w, gy, pad_left),
                           _conv_cy.conv1d_backward(x, w, gy, pad_left)):
            np.testing.assert_allclose(ga, gb_, rtol=1e-12, atol=1e-12)


def test_kernel_longer_than_series():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 3))
    w = rng.standard_normal((2, 2, 8))
    b = rng.standard_normal(2)
    got = _conv_np.conv1d_forward(x, w, b, pad_left=3)
    want = naive_conv1d(x, w, b, pad_left=3)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)
