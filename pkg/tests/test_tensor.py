import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpwc.tensor import (
    ConvFilterBank,
    add_elementwise,
    as_tensor,
    conv2d,
    conv2d_backward,
    conv2d_oracle,
    depthwise_conv2d,
    depthwise_conv2d_backward,
)


def random_bank(rng, n_filters, channels, k=3, overlap=True):
    chans = []
    for _ in range(n_filters):
        size = int(rng.integers(1, channels + 1))
        chans.append(sorted(rng.choice(channels, size=size, replace=False)))
    return ConvFilterBank.from_lists(chans, [rng.normal(size=(len(c), k, k)) for c in chans])


def test_zero_input_gives_zero_output():
    rng = np.random.default_rng(0)
    out = conv2d_oracle(np.zeros((1, 4, 5, 5)), random_bank(rng, 3, 4), stride=1, padding=1)
    assert out.shape == (1, 3, 5, 5)
    assert np.all(out == 0)


def test_single_pixel_center_tap():
    w = np.zeros((1, 3, 3))
    w[0, 1, 1] = 0.5
    bank = ConvFilterBank.from_lists([[0]], [w])
    out = conv2d_oracle(np.full((1, 1, 1, 1), 2.0), bank, stride=1, padding=1)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 1.0


def test_pointwise_sum_of_channels():
    x = np.random.default_rng(1).normal(size=(1, 2, 3, 3))
    bank = ConvFilterBank.from_lists([[0, 1]], [np.ones((2, 1, 1))])
    np.testing.assert_array_equal(conv2d_oracle(x, bank), (x[:, 0] + x[:, 1])[:, None])


@pytest.mark.parametrize("h,w,k,s,p", [(5, 5, 3, 1, 1), (7, 6, 3, 2, 1), (4, 9, 1, 2, 0),
                                       (8, 8, 5, 3, 2), (3, 3, 3, 1, 0)])
def test_output_shape(h, w, k, s, p):
    bank = random_bank(np.random.default_rng(2), 2, 3, k=k)
    out = conv2d_oracle(np.ones((2, 3, h, w)), bank, stride=s, padding=p)
    assert out.shape == (2, 2, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)


def test_errors():
    bank = ConvFilterBank.from_lists([[0, 3]], [np.ones((2, 3, 3))])
    with pytest.raises(ValueError, match="channel 3"):
        conv2d_oracle(np.ones((1, 2, 4, 4)), bank)
    ok = ConvFilterBank.from_lists([[0]], [np.ones((1, 3, 3))])
    with pytest.raises(ValueError, match="stride"):
        conv2d_oracle(np.ones((1, 1, 4, 4)), ok, stride=0)
    with pytest.raises(ValueError):
        ConvFilterBank.from_lists([[0, 1]], [np.ones((1, 3, 3))])
    with pytest.raises(ValueError):
        as_tensor(np.ones((2, 3)))


def test_overlapping_channel_lists():
    x = np.random.default_rng(3).normal(size=(1, 2, 4, 4))
    w = np.random.default_rng(4).normal(size=(1, 3, 3))
    bank = ConvFilterBank.from_lists([[0], [0], [1]], [w, 2 * w, w])
    out = conv2d_oracle(x, bank, padding=1)
    np.testing.assert_allclose(out[:, 1], 2 * out[:, 0], rtol=1e-14)


def test_add_elementwise():
    a = np.random.default_rng(5).normal(size=(2, 3, 4, 4))
    np.testing.assert_array_equal(add_elementwise(a, np.zeros_like(a)), a)
    np.testing.assert_array_equal(add_elementwise(a, -a), np.zeros_like(a))
    assert add_elementwise(np.full((1, 1, 1, 1), 3.0), np.full((1, 1, 1, 1), 0.25))[0, 0, 0, 0] == 3.25
    with pytest.raises(ValueError, match="shape mismatch"):
        add_elementwise(a, a[:, :2])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 16), alpha=st.floats(-3, 3), beta=st.floats(-3, 3),
       stride=st.integers(1, 2))
def test_oracle_is_linear(seed, alpha, beta, stride):
    rng = np.random.default_rng(seed)
    bank = random_bank(rng, 3, 4)
    x, y = rng.normal(size=(2, 2, 4, 5, 5))
    lhs = conv2d_oracle(alpha * x + beta * y, bank, stride, 1)
    rhs = alpha * conv2d_oracle(x, bank, stride, 1) + beta * conv2d_oracle(y, bank, stride, 1)
    scale = max(np.abs(lhs).max(), 1e-300)
    assert np.abs(lhs - rhs).max() / scale <= 1e-12


def test_pointwise_is_per_pixel_matmul():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 5, 4, 3))
    wm = rng.normal(size=(3, 5))
    out = conv2d_oracle(x, ConvFilterBank.dense(wm[:, :, None, None]))
    expect = np.einsum("zc,nchw->nzhw", wm, x)
    np.testing.assert_allclose(out, expect, rtol=1e-12, atol=1e-14)


def test_translation_equivariance_interior():
    rng = np.random.default_rng(7)
    bank = random_bank(rng, 2, 3)
    x = rng.normal(size=(1, 3, 9, 9))
    shifted = np.roll(x, 1, axis=3)
    a = conv2d_oracle(x, bank, 1, 1)
    b = conv2d_oracle(shifted, bank, 1, 1)
    np.testing.assert_allclose(b[..., 2:-2, 3:-1], a[..., 2:-2, 2:-2], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1), (2, 2, 5)])
def test_fast_dense_conv_matches_oracle(stride, padding, k):
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, k, k))
    np.testing.assert_allclose(conv2d(x, w, stride, padding),
                               conv2d_oracle(x, ConvFilterBank.dense(w), stride, padding),
                               rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_fast_depthwise_matches_oracle(stride):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 4, 6, 7))
    w = rng.normal(size=(4, 3, 3))
    bank = ConvFilterBank.from_lists([[c] for c in range(4)], [wc[None] for wc in w])
    np.testing.assert_allclose(depthwise_conv2d(x, w, stride, 1), conv2d_oracle(x, bank, stride, 1),
                               rtol=1e-12, atol=1e-12)


def _numeric_grad(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2 * eps)
    return g


@pytest.mark.parametrize("stride", [1, 2])
def test_fast_kernel_backward_by_finite_differences(stride):
    rng = np.random.default_rng(10)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    dw = rng.normal(size=(2, 3, 3))
    go = rng.normal(size=conv2d(x, w, stride, 1).shape)
    gx, gw = conv2d_backward(x, w, go, stride, 1)
    np.testing.assert_allclose(gx, _numeric_grad(lambda: (conv2d(x, w, stride, 1) * go).sum(), x),
                               rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gw, _numeric_grad(lambda: (conv2d(x, w, stride, 1) * go).sum(), w),
                               rtol=1e-6, atol=1e-8)
    go2 = rng.normal(size=depthwise_conv2d(x, dw, stride, 1).shape)
    gx2, gw2 = depthwise_conv2d_backward(x, dw, go2, stride, 1)
    f = lambda: (depthwise_conv2d(x, dw, stride, 1) * go2).sum()  # noqa: E731
    np.testing.assert_allclose(gx2, _numeric_grad(f, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gw2, _numeric_grad(f, dw), rtol=1e-6, atol=1e-8)
