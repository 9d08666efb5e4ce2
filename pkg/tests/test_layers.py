import numpy as np
import pytest

import pixmatch as pm
from pixmatch.layers import avg_pool2
from pixmatch.tensor import Tensor


def conv2d_ref(x, w, b, stride=1, padding=0, dilation=1):
    """Triple-loop direct summation, the independent oracle."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[co])
                    for ci in range(cin):
                        for ki in range(kh):
                            for kj in range(kw):
                                ii = i * stride + ki * dilation - padding
                                jj = j * stride + kj * dilation - padding
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += w[co, ci, ki, kj] * x[bi, ci, ii, jj]
                    out[bi, co, i, j] = acc
    return out


def test_conv2d_identity_kernel_exact(rng):
    x = Tensor(rng.standard_normal((1, 1, 5, 5)).astype(np.float32))
    w = Tensor(np.ones((1, 1, 1, 1), np.float32))
    b = Tensor(np.zeros(1, np.float32))
    out = pm.conv2d(x, w, b)
    assert np.array_equal(out.data, x.data)


def test_conv2d_all_ones_on_constant():
    c = 0.37
    x = Tensor(np.full((1, 1, 6, 6), c, np.float64))
    w = Tensor(np.ones((1, 1, 3, 3), np.float64))
    out = pm.conv2d(x, w, None, padding=0)
    assert out.shape == (1, 1, 4, 4)
    assert np.allclose(out.data, 9 * c, atol=1e-12)


def test_conv2d_matches_bruteforce(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    got = pm.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1).data
    assert np.abs(got - conv2d_ref(x, w, b, padding=1)).max() < 1e-6


def test_conv2d_strided_dilated_matches_bruteforce(rng):
    x = rng.standard_normal((2, 3, 9, 9))
    w = rng.standard_normal((2, 3, 3, 3))
    got = pm.conv2d(Tensor(x), Tensor(w), None, stride=2, padding=1, dilation=1).data
    assert np.abs(got - conv2d_ref(x, w, None, stride=2, padding=1)).max() < 1e-6
    got = pm.conv2d(Tensor(x), Tensor(w), None, stride=1, padding=2, dilation=2).data
    assert np.abs(got - conv2d_ref(x, w, None, padding=2, dilation=2)).max() < 1e-6


def test_conv2d_shape_errors(rng):
    x = Tensor(rng.standard_normal((1, 2, 5, 5)))
    with pytest.raises(ValueError):
        pm.conv2d(x, Tensor(rng.standard_normal((3, 4, 3, 3))), None)  # channel mismatch
    with pytest.raises(ValueError):
        pm.conv2d(x, Tensor(rng.standard_normal((3, 2, 2, 2))), None)  # even kernel
    x6 = Tensor(rng.standard_normal((1, 2, 6, 6)))
    with pytest.raises(ValueError):
        pm.conv2d(x6, Tensor(rng.standard_normal((3, 2, 3, 3))), None, stride=2)  # (6-3)/2 not integral


def test_conv2d_gradients(rng):
    x = Tensor(rng.standard_normal((2, 3, 7, 7)))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    b = Tensor(rng.standard_normal(4))
    err = pm.grad_check(lambda a, ww, bb: pm.conv2d(a, ww, bb, stride=2, padding=1), [x, w, b])
    assert err < 1e-6  # conv is linear, double precision FD is near-exact


def test_conv_transpose_shape_contract(rng):
    x = Tensor(rng.standard_normal((1, 4, 8, 8)))
    w = Tensor(rng.standard_normal((4, 3, 2, 2)))
    out = pm.conv_transpose2d(x, w, stride=2)
    assert out.shape == (1, 3, 16, 16)


def test_conv_transpose_identity():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    w = Tensor(np.ones((1, 1, 1, 1)))
    out = pm.conv_transpose2d(x, w, stride=1)
    assert np.array_equal(out.data, x.data)


def test_conv_transpose_is_adjoint_of_conv(rng):
    # <conv(x,w), y> == <x, conv_transpose(y,w)> for matching geometry
    w = rng.standard_normal((3, 2, 2, 2))
    x = rng.standard_normal((1, 2, 10, 10))
    y = rng.standard_normal((1, 3, 5, 5))
    # forward conv with stride 2, kernel 2: even kernels are outside conv2d's
    # contract, so compute the conv side by brute force
    conv_xy = 0.0
    for co in range(3):
        for i in range(5):
            for j in range(5):
                for ci in range(2):
                    for ki in range(2):
                        for kj in range(2):
                            conv_xy += y[0, co, i, j] * w[co, ci, ki, kj] * x[0, ci, 2 * i + ki, 2 * j + kj]
    xt = pm.conv_transpose2d(Tensor(y), Tensor(w), stride=2)
    assert abs(conv_xy - float((xt.data * x).sum())) < 1e-6


def test_conv_transpose_gradients(rng):
    x = Tensor(rng.standard_normal((2, 4, 5, 5)))
    w = Tensor(rng.standard_normal((4, 2, 4, 4)))
    err = pm.grad_check(lambda a, ww: pm.conv_transpose2d(a, ww, stride=2), [x, w])
    assert err < 1e-6


def test_conv_transpose_parity_error(rng):
    with pytest.raises(ValueError):
        pm.conv_transpose2d(Tensor(rng.standard_normal((1, 2, 4, 4))),
                            Tensor(rng.standard_normal((2, 1, 3, 3))), stride=2)


def test_batch_norm_normalizes(rng):
    x = Tensor(rng.standard_normal((4, 3, 8, 8)) * 3 + 1)
    gamma = Tensor(np.ones(3))
    beta = Tensor(np.zeros(3))
    out = pm.batch_norm(x, gamma, beta, None, training=True).data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-5
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-4


def test_batch_norm_constant_input_gives_beta():
    x = Tensor(np.full((2, 2, 4, 4), 5.0))
    out = pm.batch_norm(x, Tensor(np.ones(2)), Tensor(np.array([0.3, -0.7])), None, training=True).data
    assert np.allclose(out[:, 0], 0.3, atol=1e-4)
    assert np.allclose(out[:, 1], -0.7, atol=1e-4)


def test_batch_norm_running_stats_and_eval(rng):
    stats = pm.RunningStats(3)
    x = rng.standard_normal((8, 3, 4, 4)) * 2 + 0.5
    gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
    pm.batch_norm(Tensor(x), gamma, beta, stats, training=True)
    assert np.allclose(stats.mean, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-6)
    # eval mode normalizes with the running buffers
    out = pm.batch_norm(Tensor(x), gamma, beta, stats, training=False).data
    expect = (x - stats.mean[None, :, None, None]) / np.sqrt(stats.var[None, :, None, None] + 1e-5)
    assert np.allclose(out, expect, atol=1e-5)


def test_batch_norm_gradients(rng):
    x = Tensor(rng.standard_normal((3, 2, 4, 4)))
    gamma = Tensor(rng.standard_normal(2) + 1.5)
    beta = Tensor(rng.standard_normal(2))
    err = pm.grad_check(lambda a, g, b: pm.batch_norm(a, g, b, None, training=True), [x, gamma, beta])
    assert err < 1e-4


def test_batch_norm_empty_extent():
    with pytest.raises(ValueError):
        pm.batch_norm(Tensor(np.zeros((0, 3, 4, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                      None, training=True)


def test_avg_pool2(rng):
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4), requires_grad=True)
    out = avg_pool2(x)
    assert np.allclose(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    err = pm.grad_check(lambda a: avg_pool2(a), [Tensor(rng.standard_normal((2, 3, 6, 6)))])
    assert err < 1e-8


def test_downsample_quarter_matches_block_center_mean(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    out = pm.downsample_quarter(Tensor(x)).data
    manual = x.reshape(2, 3, 2, 4, 2, 4)[:, :, :, 1:3, :, 1:3].mean(axis=(3, 5))
    assert np.allclose(out, manual, atol=1e-7)
    err = pm.grad_check(lambda a: pm.downsample_quarter(a), [Tensor(rng.standard_normal((1, 2, 8, 8)))])
    assert err < 1e-8
