"""Structured ops over NCHW maps: convolution, pooling, batch norm, losses.

Convolution is cross-correlation (no kernel flip), evaluated as a sum of
k*k shifted pointwise products so both directions of the backward pass stay
simple. Adaptive average pooling partitions each spatial axis into
contiguous near-equal bins with boundaries floor(i*H/out).
"""

from __future__ import annotations

import numpy as np

from .tensor import NumericsError, ShapeError, Tensor, _accum, _result

__all__ = [
    "conv2d",
    "pool2d",
    "max_pool2d",
    "avg_pool2d",
    "adaptive_avg_pool2d",
    "batch_norm",
    "cross_entropy",
    "bilinear_upsample",
    "adaptive_bins",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _conv_geometry(x, w, stride, pad):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIkk weights")
    n, c, h, width = x.shape
    o, ci, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be square and odd, got {kh}x{kw}")
    if ci != c:
        raise ShapeError(f"weight expects {ci} input channels, map has {c}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (width + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"non-positive output extent {ho}x{wo}")
    return n, c, h, width, o, kh, ho, wo


def _conv1x1(x, w, stride):
    """Pointwise convolution: a single channel-mixing matmul per position."""
    n, c, h, width = x.shape
    o = w.shape[0]
    xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
    kernel = w.data.reshape(o, c)
    out = np.tensordot(xs, kernel, axes=([1], [1]))          # N, Ho, Wo, O
    out = np.ascontiguousarray(np.moveaxis(out, 3, 1))

    def backward(g):
        gm = np.moveaxis(g, 1, 3)
        if w.requires_grad:
            _accum(w, np.tensordot(gm, xs, axes=([0, 1, 2], [0, 2, 3])).reshape(w.shape))
        if x.requires_grad:
            contrib = np.moveaxis(np.tensordot(gm, kernel, axes=([3], [0])), 3, 1)
            if stride > 1:
                dx = np.zeros_like(x.data)
                dx[:, :, ::stride, ::stride] = contrib
            else:
                dx = contrib
            _accum(x, dx)

    return _result(out, (x, w), backward)


def conv2d(x, w, stride=1, pad=0):
    """2-D cross-correlation of an NCHW map with OIkk weights.

    Patches are gathered once (im2col) so each direction of the pass is a
    single matrix product; 1x1 kernels skip the gather entirely.
    """
    n, c, h, width, o, k, ho, wo = _conv_geometry(x, w, stride, pad)
    if k == 1 and pad == 0:
        return _conv1x1(x, w, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data

    # channels-last patch layout keeps every gather/scatter a contiguous run
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n, ho, wo, k, k, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc), writeable=False)
    patches = np.ascontiguousarray(view).reshape(n * ho * wo, k * k * c)
    kernel = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(o, k * k * c)
    out = patches @ kernel.T
    out = np.ascontiguousarray(np.moveaxis(out.reshape(n, ho, wo, o), 3, 1))

    def backward(g):
        g2 = np.moveaxis(g, 1, 3).reshape(n * ho * wo, o)
        if w.requires_grad:
            dw = (g2.T @ patches).reshape(o, k, k, c)
            _accum(w, np.ascontiguousarray(dw.transpose(0, 3, 1, 2)))
        if x.requires_grad:
            dpatch = (g2 @ kernel).reshape(n, ho, wo, k, k, c)
            dxp = np.zeros((n, h + 2 * pad, width + 2 * pad, c), dtype=x.dtype)
            for di in range(k):
                for dj in range(k):
                    dxp[:, di : di + (ho - 1) * stride + 1 : stride,
                        dj : dj + (wo - 1) * stride + 1 : stride, :] += dpatch[:, :, :, di, dj, :]
            if pad:
                dxp = dxp[:, pad : pad + h, pad : pad + width, :]
            _accum(x, np.ascontiguousarray(np.moveaxis(dxp, 3, 1)))

    return _result(out, (x, w), backward)


def _pool_geometry(x, k, stride, pad):
    if x.ndim != 4:
        raise ShapeError("pooling expects an NCHW map")
    n, c, h, w = x.shape
    if k <= 0 or k > min(h, w) + 2 * pad:
        raise ShapeError(f"invalid window {k} for map {h}x{w} with pad {pad}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"non-positive output extent {ho}x{wo}")
    return n, c, h, w, ho, wo


def max_pool2d(x, k, stride=None, pad=0):
    """Windowed max; ties go to the first window offset in scan order."""
    stride = stride or k
    n, c, h, w, ho, wo = _pool_geometry(x, k, stride, pad)
    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                    constant_values=-np.inf)
    else:
        xp = x.data

    best = None
    winner = np.zeros((n, c, ho, wo), dtype=np.int16)
    for idx in range(k * k):
        di, dj = divmod(idx, k)
        vals = xp[:, :, di : di + (ho - 1) * stride + 1 : stride,
                  dj : dj + (wo - 1) * stride + 1 : stride]
        if best is None:
            best = vals.copy()
        else:
            better = vals > best
            best[better] = vals[better]
            winner[better] = idx

    def backward(g):
        if not x.requires_grad:
            return
        dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        for idx in range(k * k):
            di, dj = divmod(idx, k)
            dxp[:, :, di : di + (ho - 1) * stride + 1 : stride,
                dj : dj + (wo - 1) * stride + 1 : stride] += g * (winner == idx)
        _accum(x, dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp)

    return _result(best, (x,), backward)


def avg_pool2d(x, k, stride=None, pad=0):
    """Windowed average with divisor k*k (zero padding counts)."""
    stride = stride or k
    n, c, h, w, ho, wo = _pool_geometry(x, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data

    acc = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            acc += xp[:, :, di : di + (ho - 1) * stride + 1 : stride,
                      dj : dj + (wo - 1) * stride + 1 : stride]
    out = acc / (k * k)

    def backward(g):
        if not x.requires_grad:
            return
        gs = g / (k * k)
        dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                dxp[:, :, di : di + (ho - 1) * stride + 1 : stride,
                    dj : dj + (wo - 1) * stride + 1 : stride] += gs
        _accum(x, dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp)

    return _result(out, (x,), backward)


def adaptive_bins(extent, target):
    """Near-equal contiguous bin boundaries: [floor(i*H/t), floor((i+1)*H/t))."""
    if target <= 0 or target > extent:
        raise ShapeError(f"adaptive target {target} exceeds input extent {extent}")
    return [(i * extent // target, (i + 1) * extent // target) for i in range(target)]


def adaptive_avg_pool2d(x, out_hw):
    """Average pooling onto a fixed output grid via near-equal bins."""
    if isinstance(out_hw, int):
        out_hw = (out_hw, out_hw)
    oh, ow = out_hw
    if x.ndim != 4:
        raise ShapeError("pooling expects an NCHW map")
    n, c, h, w = x.shape
    rows = adaptive_bins(h, oh)
    cols = adaptive_bins(w, ow)

    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    for i, (h0, h1) in enumerate(rows):
        for j, (w0, w1) in enumerate(cols):
            out[:, :, i, j] = x.data[:, :, h0:h1, w0:w1].mean(axis=(2, 3))

    def backward(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        for i, (h0, h1) in enumerate(rows):
            for j, (w0, w1) in enumerate(cols):
                dx[:, :, h0:h1, w0:w1] += g[:, :, i : i + 1, j : j + 1] / ((h1 - h0) * (w1 - w0))
        _accum(x, dx)

    return _result(out, (x,), backward)


def pool2d(x, mode, size, stride=None, pad=0):
    """Dispatch on pooling mode: ``max``, ``avg`` or ``adaptive-avg``."""
    if mode == "max":
        return max_pool2d(x, size, stride=stride, pad=pad)
    if mode == "avg":
        return avg_pool2d(x, size, stride=stride, pad=pad)
    if mode == "adaptive-avg":
        return adaptive_avg_pool2d(x, size)
    raise ValueError(f"unknown pooling mode {mode!r}")


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batch normalization over N, H, W.

    Train mode normalizes with the batch moments (biased variance) and
    updates the running stats in place with the given momentum; eval mode
    normalizes with the running stats. gamma/beta are length-C tensors.
    """
    if x.ndim != 4:
        raise ShapeError("batch_norm expects an NCHW map")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        g_xhat_sum = (g * xhat).sum(axis=(0, 2, 3))
        _accum(gamma, g_xhat_sum)
        _accum(beta, g.sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        scale = (gamma.data * inv)[None, :, None, None]
        if training:
            m = x.shape[0] * x.shape[2] * x.shape[3]
            g_mean = g.mean(axis=(0, 2, 3))[None, :, None, None]
            dx = g - g_mean
            dx -= xhat * (g_xhat_sum / m)[None, :, None, None]
            dx *= scale
        else:
            dx = g * scale
        _accum(x, dx)

    return _result(out, (x, gamma, beta), backward)


def cross_entropy(logits, labels):
    """Mean negative log likelihood of integer labels under the logits."""
    if logits.ndim != 2:
        raise ShapeError("cross_entropy expects [N, classes] logits")
    labels = np.asarray(labels)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},)")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        if not logits.requires_grad:
            return
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        _accum(logits, float(g) * p / n)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def check_loss(loss, context=""):
    """Raise with a diagnostic if a training loss went non-finite."""
    val = float(loss.data)
    if not np.isfinite(val):
        raise NumericsError(f"non-finite loss {val!r} {context}".strip())
    return val


def _linear_taps(extent, factor):
    # align_corners=False sampling: src = (i + 0.5)/f - 0.5, clipped
    src = (np.arange(extent * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0, extent - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, extent - 1)
    w1 = src - i0
    return i0, i1, w1


def bilinear_upsample(x, factor):
    """Upsample an NCHW map by an integer factor with bilinear weights."""
    if factor < 1 or int(factor) != factor:
        raise ShapeError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return x
    n, c, h, w = x.shape
    i0, i1, wi = _linear_taps(h, factor)
    j0, j1, wj = _linear_taps(w, factor)
    wi = wi[:, None].astype(x.dtype)
    wj = wj[None, :].astype(x.dtype)

    d = x.data
    out = ((1 - wi) * (1 - wj) * d[:, :, i0[:, None], j0[None, :]]
           + (1 - wi) * wj * d[:, :, i0[:, None], j1[None, :]]
           + wi * (1 - wj) * d[:, :, i1[:, None], j0[None, :]]
           + wi * wj * d[:, :, i1[:, None], j1[None, :]])

    def backward(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        for ii, jj, ww in (
            (i0, j0, (1 - wi) * (1 - wj)),
            (i0, j1, (1 - wi) * wj),
            (i1, j0, wi * (1 - wj)),
            (i1, j1, wi * wj),
        ):
            np.add.at(dx, (slice(None), slice(None), ii[:, None], jj[None, :]), g * ww)
        _accum(x, dx)

    return _result(np.ascontiguousarray(out), (x,), backward)
