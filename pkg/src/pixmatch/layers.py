"""Neural layers on top of the autodiff core: convolution, transposed
convolution, batch normalization, and the fixed quarter-resolution
downsampler.

Convolutions run as im2col + one BLAS matmul. The input-gradient (and the
transposed-convolution forward, which is the same scatter) goes through
``np.bincount`` on precomputed flat indices, which is much faster than
``np.add.at`` for the overlapping writes of col2im.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _accum, _make

# col2im scatter indices depend only on geometry, so they are cached across
# training steps (shapes repeat every step).
_COL2IM_CACHE: dict = {}


def _out_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    eff = dilation * (k - 1) + 1
    num = size + 2 * padding - eff
    if num < 0 or num % stride != 0:
        raise ValueError(
            f"conv2d: non-integer output size for input {size}, kernel {k}, "
            f"stride {stride}, padding {padding}, dilation {dilation}"
        )
    return num // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int) -> np.ndarray:
    """(N,C,Hp,Wp) padded input -> (N*Ho*Wo, C*kh*kw) patch matrix."""
    eh = dilation * (kh - 1) + 1
    ew = dilation * (kw - 1) + 1
    win = sliding_window_view(xp, (eh, ew), axis=(2, 3))
    if dilation > 1:
        win = win[..., ::dilation, ::dilation]
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def _col2im_indices(n, c, hp, wp, ho, wo, kh, kw, stride, dilation):
    key = (n, c, hp, wp, ho, wo, kh, kw, stride, dilation)
    idx = _COL2IM_CACHE.get(key)
    if idx is None:
        ii = (np.arange(ho) * stride)[:, None] + (np.arange(kh) * dilation)[None, :]  # (Ho,kh)
        jj = (np.arange(wo) * stride)[:, None] + (np.arange(kw) * dilation)[None, :]  # (Wo,kw)
        # spatial flat index arranged (Ho,Wo,kh,kw)
        spat = ii[:, None, :, None] * wp + jj[None, :, None, :]
        nc = (np.arange(n)[:, None] * c + np.arange(c)[None, :]) * (hp * wp)  # (N,C)
        # match the (N,Ho,Wo,C,kh,kw) layout of the col matrix
        idx = nc[:, None, None, :, None, None] + spat[None, :, :, None, :, :]
        idx = np.ascontiguousarray(idx.reshape(-1))
        _COL2IM_CACHE[key] = idx
    return idx


def _col2im(cols: np.ndarray, n, c, hp, wp, ho, wo, kh, kw, stride, dilation, dtype):
    """Scatter-add a (N*Ho*Wo, C*kh*kw) matrix back onto the padded image."""
    idx = _col2im_indices(n, c, hp, wp, ho, wo, kh, kw, stride, dilation)
    flat = np.bincount(idx, weights=cols.reshape(-1), minlength=n * c * hp * wp)
    return flat.reshape(n, c, hp, wp).astype(dtype, copy=False)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0,
           dilation: int = 1) -> Tensor:
    """2-d cross-correlation with zero padding.

    out(n,co,i,j) = sum_{ci,ki,kj} w(co,ci,ki,kj) * x(n,ci, i*stride+ki*dilation-padding, ...)
    with out-of-range reads counting as zero. Differentiable in x, w, and b.
    Kernel sides must be odd and the output size must come out integral.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIHW weights")
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ValueError(f"conv2d: input has {cin} channels but weights expect {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel sides must be odd, got {kh}x{kw}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {tuple(b.shape)} does not match {cout} output channels")
    ho = _out_size(h, kh, stride, padding, dilation)
    wo = _out_size(wd, kw, stride, padding, dilation)
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d: empty output")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, ho2, wo2 = _im2col(xp, kh, kw, stride, dilation)
    assert (ho2, wo2) == (ho, wo)
    w_mat = w.data.reshape(cout, cin * kh * kw)
    out = cols @ w_mat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    hp, wp = xp.shape[2], xp.shape[3]

    def bw(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        if w.requires_grad:
            _accum(w, (g_mat.T @ cols).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, g_mat.sum(axis=0))
        if x.requires_grad:
            pad_g = dilation * (kh - 1) - padding
            if stride == 1 and pad_g >= 0:
                # stride-1 input gradient is itself a correlation of the output
                # gradient with the flipped kernel: gather + one matmul, no scatter
                gp = np.pad(g, ((0, 0), (0, 0), (pad_g, pad_g), (pad_g, pad_g)))
                g_cols2, _, _ = _im2col(gp, kh, kw, 1, dilation)
                w_flip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * kh * kw)
                gx = (g_cols2 @ w_flip.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2)
                _accum(x, np.ascontiguousarray(gx))
            else:
                g_cols = g_mat @ w_mat
                gxp = _col2im(g_cols, n, cin, hp, wp, ho, wo, kh, kw, stride, dilation, x.dtype)
                if padding:
                    gxp = gxp[:, :, padding:hp - padding, padding:wp - padding]
                _accum(x, gxp)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw)


def conv_transpose2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` with the same kernel.

    ``w`` keeps the conv2d layout (Cout, Cin, kH, kW); the input here has Cout
    channels and the output Cin. Padding is fixed at (k - stride) / 2, which
    makes the output exactly ``stride`` times the input spatially; kernel size
    and stride must therefore have equal parity.
    """
    if stride < 1:
        raise ValueError("conv_transpose2d: stride must be >= 1")
    n, cout, h, wd = x.shape
    cout_w, cin, kh, kw = w.shape
    if cout_w != cout:
        raise ValueError(f"conv_transpose2d: input has {cout} channels but weights expect {cout_w}")
    if kh != kw:
        raise ValueError("conv_transpose2d: square kernels only")
    if (kh - stride) % 2 != 0 or kh < stride:
        raise ValueError(f"conv_transpose2d: need kernel ≡ stride (mod 2) and kernel >= stride, got k={kh} s={stride}")
    padding = (kh - stride) // 2

    hp = (h - 1) * stride + kh
    wp = (wd - 1) * stride + kw
    w_mat = w.data.reshape(cout, cin * kh * kw)
    x_mat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n * h * wd, cout)
    cols = x_mat @ w_mat
    outp = _col2im(cols, n, cin, hp, wp, h, wd, kh, kw, stride, 1, x.dtype)
    out = outp[:, :, padding:hp - padding, padding:wp - padding] if padding else outp
    out = np.ascontiguousarray(out)

    def bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        g_cols, _, _ = _im2col(gp, kh, kw, stride, 1)
        if x.requires_grad:
            gx = (g_cols @ w_mat.T).reshape(n, h, wd, cout).transpose(0, 3, 1, 2)
            _accum(x, np.ascontiguousarray(gx))
        if w.requires_grad:
            _accum(w, (x_mat.T @ g_cols).reshape(w.shape))

    return _make(out, (x, w), bw)


class RunningStats:
    """Running mean/variance buffers for batch normalization."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def update(self, mean, var, momentum: float) -> None:
        self.mean = ((1.0 - momentum) * self.mean + momentum * mean).astype(self.mean.dtype)
        self.var = ((1.0 - momentum) * self.var + momentum * var).astype(self.var.dtype)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats | None,
               training: bool, eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with the batch statistics (biased variance) and
    folds them into the running buffers; eval mode normalizes with the running
    buffers. Differentiable in x, gamma, and beta.
    """
    n, c, h, wd = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: gamma/beta must have shape ({c},)")
    if n * h * wd == 0:
        raise ValueError("batch_norm: empty batch/spatial extent")

    axes = (0, 2, 3)
    cnt = n * h * wd
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if stats is not None:
            stats.update(mu, var, momentum)
    else:
        if stats is None:
            raise ValueError("batch_norm: eval mode needs running stats")
        mu = stats.mean.astype(x.dtype)
        var = stats.var.astype(x.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            gi = gamma.data[None, :, None, None] * inv[None, :, None, None]
            if training:
                gm = g.mean(axis=axes)[None, :, None, None]
                gxm = (g * xhat).mean(axis=axes)[None, :, None, None]
                _accum(x, gi * (g - gm - xhat * gxm))
            else:
                _accum(x, gi * g)

    _ = cnt
    return _make(out, (x, gamma, beta), bw)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling, stride 2. The encoder's downsampling stage."""
    n, c, h, wd = x.shape
    if h % 2 or wd % 2:
        raise ValueError(f"avg_pool2: spatial size {h}x{wd} not divisible by 2")
    d = x.data
    out = 0.25 * (d[:, :, 0::2, 0::2] + d[:, :, 0::2, 1::2] + d[:, :, 1::2, 0::2] + d[:, :, 1::2, 1::2])

    def bw(g):
        gx = np.empty_like(x.data)
        q = 0.25 * g
        gx[:, :, 0::2, 0::2] = q
        gx[:, :, 0::2, 1::2] = q
        gx[:, :, 1::2, 0::2] = q
        gx[:, :, 1::2, 1::2] = q
        _accum(x, gx)

    return _make(np.ascontiguousarray(out), (x,), bw)


def downsample_quarter(x: Tensor) -> Tensor:
    """Bilinear 1/4-scale downsampling (half-pixel centers).

    At exactly 1/4 scale the bilinear kernel reduces to the mean of the
    central 2x2 pixels of each 4x4 block, which is what this computes. Linear,
    hence trivially differentiable.
    """
    n, c, h, wd = x.shape
    if h % 4 or wd % 4:
        raise ValueError(f"downsample_quarter: spatial size {h}x{wd} not divisible by 4")
    d = x.data
    out = 0.25 * (d[:, :, 1::4, 1::4] + d[:, :, 1::4, 2::4] + d[:, :, 2::4, 1::4] + d[:, :, 2::4, 2::4])

    def bw(g):
        gx = np.zeros_like(x.data)
        q = 0.25 * g
        gx[:, :, 1::4, 1::4] += q
        gx[:, :, 1::4, 2::4] += q
        gx[:, :, 2::4, 1::4] += q
        gx[:, :, 2::4, 2::4] += q
        _accum(x, gx)

    return _make(np.ascontiguousarray(out), (x,), bw)
