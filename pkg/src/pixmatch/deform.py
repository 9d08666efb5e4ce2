"""Deformable convolution, bilinear sampling, and the fixed-weight warp layer.

A deformable convolution shifts every kernel tap by a learned 2-d offset and
reads the input at the resulting fractional location through bilinear
interpolation, so the op is differentiable in the input, the weights, and the
offsets themselves. The warp layer is the 1x1 special case with unit weights:
each output pixel is the input sampled at ``p + offset(p)``, per channel.

Conventions fixed here (they matter for checkpoint compatibility):
  - offset fields store (dy, dx) channel pairs, one pair per kernel tap, taps
    in row-major order of the sampling grid;
  - reads outside the image count as zero (zero padding), matching conv2d;
  - the bilinear kernel k(a,b) = max(0, 1-|a-b|) has kinks at |a-b| in {0,1};
    its derivative there is taken as 0, so sampling at an exactly integral
    location contributes no offset gradient.

Implementation note: the sampling pattern of one image is densified into a
(samples x cells) weight matrix holding the four corner weights of every
sample. Forward evaluation, the input gradient, and the channel reduction of
the coordinate gradient then each collapse into one small matmul per image,
which beats element-wise scatter/gather by a wide margin at the quarter-scale
map sizes this model works at.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _accum, _make


def kernel_taps(kh: int, kw: int) -> np.ndarray:
    """The regular sampling grid as (kh*kw, 2) integer (dy, dx) taps, centered
    at the origin for odd kernels, row-major."""
    if kh < 1 or kw < 1:
        raise ValueError("kernel_taps: kernel sides must be positive")
    dy = np.arange(kh) - (kh - 1) // 2
    dx = np.arange(kw) - (kw - 1) // 2
    grid = np.stack(np.meshgrid(dy, dx, indexing="ij"), axis=-1)
    return grid.reshape(kh * kw, 2)


def bilinear_sample(img, p) -> float:
    """Bilinear read of a single-channel image at fractional location (y, x).

    Implements sum_q k(q_y,p_y) k(q_x,p_x) img(q) with zero outside the image,
    i.e. the interpolation the deformable ops use, as a scalar reference.
    """
    d = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("bilinear_sample: expected a single-channel [H,W] image")
    h, w = d.shape
    y, x = float(p[0]), float(p[1])
    fy, fx = int(np.floor(y)), int(np.floor(x))
    total = 0.0
    for qy in (fy, fy + 1):
        ky = max(0.0, 1.0 - abs(qy - y))
        if ky == 0.0 or not (0 <= qy < h):
            continue
        for qx in (fx, fx + 1):
            kx = max(0.0, 1.0 - abs(qx - x))
            if kx == 0.0 or not (0 <= qx < w):
                continue
            total += ky * kx * float(d[qy, qx])
    return total


class _BilinearMap:
    """Sampling pattern of (N,P) fractional points on (H,W) grids.

    Small maps (the training-time quarter-scale feature maps) are densified:
    ``weights[b]`` is the (P, H*W) matrix whose row p carries the bilinear
    corner weights of sample p, and forward/backward collapse into matmuls.
    Large maps (full-resolution inference warps) read by corner gathers
    instead; the dense matrix is only built when a gradient actually needs it.
    """

    __slots__ = ("n", "h", "w", "p", "dtype", "ay", "ax", "corners", "_weights")

    DENSE_LIMIT = 1 << 20  # p * h * w above this: gather forward, lazy dense

    def __init__(self, n: int, h: int, w: int, ys: np.ndarray, xs: np.ndarray, dtype):
        p = ys.shape[1]
        self.n, self.h, self.w, self.p = n, h, w, p
        self.dtype = dtype
        fy = np.floor(ys)
        fx = np.floor(xs)
        self.ay = ys - fy
        self.ax = xs - fx
        fy = fy.astype(np.int64)
        fx = fx.astype(np.int64)
        self.corners = []
        for dy in (0, 1):
            wy = self.ay if dy else 1.0 - self.ay
            qy = fy + dy
            oky = (qy >= 0) & (qy < h)
            for dx in (0, 1):
                wx = self.ax if dx else 1.0 - self.ax
                qx = fx + dx
                ok = oky & (qx >= 0) & (qx < w)
                idx = np.clip(qy, 0, h - 1) * w + np.clip(qx, 0, w - 1)
                self.corners.append((idx, ok, wy, wx))
        self._weights = None

    @property
    def weights(self) -> np.ndarray:
        if self._weights is None:
            hw = self.h * self.w
            rows = np.arange(self.p, dtype=np.int64) * hw
            dense = np.zeros((self.n, self.p, hw), dtype=self.dtype)
            flat = dense.reshape(self.n, self.p * hw)
            rows_b = np.arange(self.n)[:, None]
            for idx, ok, wy, wx in self.corners:
                # indices are unique within one corner pass (one cell per
                # sample), so in-place fancy addition accumulates correctly
                flat[rows_b, rows + idx] += ((wy * wx) * ok).astype(self.dtype, copy=False)
            self._weights = dense
        return self._weights

    def read(self, xd: np.ndarray) -> np.ndarray:
        """(N,C,H,W) -> sampled values (N,C,P)."""
        flat = xd.reshape(self.n, -1, self.h * self.w)
        if self.p * self.h * self.w <= self.DENSE_LIMIT:
            return np.matmul(flat, self.weights.transpose(0, 2, 1))
        vals = np.zeros((self.n, flat.shape[1], self.p), dtype=xd.dtype)
        for idx, ok, wy, wx in self.corners:
            v = np.take_along_axis(flat, idx[:, None, :], axis=2)
            vals += v * (((wy * wx) * ok)[:, None, :]).astype(xd.dtype, copy=False)
        return vals

    def grad_x(self, g_vals: np.ndarray, dtype) -> np.ndarray:
        """Adjoint of read: scatter (N,C,P) value grads onto the grid."""
        out = np.matmul(g_vals, self.weights)
        return out.reshape(g_vals.shape[0], -1, self.h, self.w).astype(dtype, copy=False)

    def grad_p(self, g_vals: np.ndarray, xd: np.ndarray):
        """Channel-summed gradients w.r.t. the sample coordinates, (gy, gx).

        Exactly integral coordinates get derivative 0 (the kink convention).
        """
        xf = xd.reshape(self.n, -1, self.h * self.w)
        gy = np.empty((self.n, self.p), dtype=g_vals.dtype)
        gx = np.empty_like(gy)
        for b in range(self.n):
            # A[p, q] = sum_c g[c,p] x[c,q]; corner contributions are takes of A
            a = g_vals[b].T @ xf[b]
            s = [np.take_along_axis(a, idx[b][:, None], axis=1)[:, 0] * ok[b]
                 for idx, ok, _, _ in self.corners]
            s00, s01, s10, s11 = s
            ax, ay = self.ax[b], self.ay[b]
            gy[b] = (-(1.0 - ax) * s00 - ax * s01 + (1.0 - ax) * s10 + ax * s11) * (ay != 0.0)
            gx[b] = (-(1.0 - ay) * s00 + (1.0 - ay) * s01 - ay * s10 + ay * s11) * (ax != 0.0)
        return gy, gx


def bilinear_read(features: np.ndarray, points) -> np.ndarray:
    """Vectorized multi-channel bilinear reads: (C,H,W) at (S,2) points -> (S,C)."""
    f = np.asarray(features, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    bmap = _BilinearMap(1, f.shape[1], f.shape[2], pts[None, :, 0], pts[None, :, 1], np.float64)
    return bmap.read(f[None])[0].T


def _offsets_to_coords(offsets: np.ndarray, taps: np.ndarray, ho: int, wo: int,
                       stride: int, padding: int):
    """Per-position per-tap absolute sample coordinates in input pixels.

    offsets: (N, 2*T, Ho, Wo) with channel 2t = dy, 2t+1 = dx of tap t.
    Returns ys, xs of shape (N, Ho*Wo*T), taps fastest.
    """
    n = offsets.shape[0]
    t = taps.shape[0]
    off = offsets.reshape(n, t, 2, ho, wo).transpose(0, 3, 4, 1, 2)  # (N,Ho,Wo,T,2)
    ctr_y = np.arange(ho) * stride - padding + 0.0
    ctr_x = np.arange(wo) * stride - padding + 0.0
    base_y = ctr_y[:, None, None] + taps[None, None, :, 0]  # (Ho,1,T)
    base_x = ctr_x[None, :, None] + taps[None, None, :, 1]  # (1,Wo,T)
    ys = np.broadcast_to(base_y[None, :, :, :], (n, ho, wo, t)) + off[..., 0]
    xs = np.broadcast_to(base_x[None, :, :, :], (n, ho, wo, t)) + off[..., 1]
    return ys.reshape(n, -1), xs.reshape(n, -1)


def deform_conv2d(x: Tensor, w: Tensor, offsets: Tensor, stride: int = 1,
                  padding: int = 0) -> Tensor:
    """Convolution whose taps are displaced by a learned offset field.

    out(p0) = sum_taps w(tap) * x(p0 + tap + offset(p0, tap)), the read done by
    bilinear interpolation with zero padding. With all offsets zero this is
    exactly conv2d (no bias). Differentiable in x, w, and offsets.

    ``offsets`` lives at the output resolution with 2 * kh * kw channels; the
    taps are centered, so padding aligns sampling with conv2d's padded grid.
    """
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ValueError(f"deform_conv2d: input has {cin} channels but weights expect {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("deform_conv2d: kernel sides must be odd")
    t = kh * kw
    if (h + 2 * padding - kh) % stride or (wd + 2 * padding - kw) % stride:
        raise ValueError("deform_conv2d: non-integer output size")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if offsets.shape != (n, 2 * t, ho, wo):
        raise ValueError(
            f"deform_conv2d: offsets must have shape {(n, 2 * t, ho, wo)}, got {tuple(offsets.shape)}"
        )

    taps = kernel_taps(kh, kw)
    center = (kh - 1) // 2  # tap grid center sits at i*stride - padding + center
    ys, xs = _offsets_to_coords(offsets.data, taps, ho, wo, stride, padding)
    bmap = _BilinearMap(n, h, wd, ys + center, xs + center, x.dtype)
    vals = bmap.read(x.data)  # (N, Cin, Ho*Wo*T)
    cols = vals.reshape(n, cin, ho * wo, t).transpose(0, 2, 1, 3).reshape(n * ho * wo, cin * t)
    w_mat = w.data.reshape(cout, cin * t)
    out = (cols @ w_mat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bw(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        if w.requires_grad:
            _accum(w, (g_mat.T @ cols).reshape(w.shape))
        if x.requires_grad or offsets.requires_grad:
            g_vals = (g_mat @ w_mat).reshape(n, ho * wo, cin, t).transpose(0, 2, 1, 3)
            g_vals = np.ascontiguousarray(g_vals).reshape(n, cin, ho * wo * t)
            if x.requires_grad:
                _accum(x, bmap.grad_x(g_vals, x.dtype))
            if offsets.requires_grad:
                gy, gx = bmap.grad_p(g_vals, x.data)
                go = np.empty((n, 2 * t, ho, wo), dtype=offsets.dtype)
                go[:, 0::2] = gy.reshape(n, ho, wo, t).transpose(0, 3, 1, 2)
                go[:, 1::2] = gx.reshape(n, ho, wo, t).transpose(0, 3, 1, 2)
                _accum(offsets, go)

    return _make(out, (x, w, offsets), bw)


def warp(x: Tensor, offsets: Tensor) -> Tensor:
    """Per-pixel warp: out(p) = x(p + offset(p)) for every channel.

    The 1x1 deformable layer with fixed unit weights. ``offsets`` carries two
    channels (dy, dx) at the same spatial size as ``x``; there is nothing to
    train here, gradients flow to x and to the offsets only.
    """
    n, c, h, wd = x.shape
    if offsets.shape != (n, 2, h, wd):
        raise ValueError(f"warp: offsets must have shape {(n, 2, h, wd)}, got {tuple(offsets.shape)}")

    iy = np.arange(h, dtype=x.dtype)[:, None]
    ix = np.arange(wd, dtype=x.dtype)[None, :]
    ys = (iy + offsets.data[:, 0]).reshape(n, -1)
    xs = (ix + offsets.data[:, 1]).reshape(n, -1)
    bmap = _BilinearMap(n, h, wd, ys, xs, x.dtype)
    out = np.ascontiguousarray(bmap.read(x.data).reshape(n, c, h, wd))

    def bw(g):
        g_vals = g.reshape(n, c, h * wd)
        if x.requires_grad:
            _accum(x, bmap.grad_x(g_vals, x.dtype))
        if offsets.requires_grad:
            gy, gx = bmap.grad_p(g_vals, x.data)
            go = np.stack([gy.reshape(n, h, wd), gx.reshape(n, h, wd)], axis=1)
            _accum(offsets, go.astype(offsets.dtype, copy=False))

    return _make(out, (x, offsets), bw)
