"""Tokenizers: turn a feature map into a small set of visual tokens.

A feature map is viewed per sample as an HW x C matrix X. Each tokenizer
produces L tokens (L much smaller than HW); the attention-style variants
also return the HW x L spatial attention map A whose columns are softmax
distributions over pixels, so every token is a convex combination of pixel
features.

All functions accept either a single sample (rank-2 X) or a batch with a
leading N axis, and return outputs of matching rank.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn_ops import adaptive_bins
from .tensor import ShapeError, Tensor, matmul, softmax_axis

__all__ = [
    "filter_tokenize",
    "recurrent_tokenize",
    "pooling_tokenize",
    "kmeans_centroids",
    "cluster_attend",
    "cluster_tokenize",
]

KMEANS_ITERS = 10


def _lift(x):
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected rank 2 or 3 feature view, got rank {x.ndim}")


def _drop(t, squeezed):
    return T.reshape(t, t.shape[1:]) if squeezed else t


def _attend(x, logits):
    # A = softmax over pixels of the grouping logits; T = A^T X.
    a = softmax_axis(logits, axis=1)
    tokens = matmul(T.transpose(a, (0, 2, 1)), x)
    return tokens, a


def filter_tokenize(x, w_a):
    """Group pixels with fixed pointwise filters; returns (tokens, attention).

    x: [N, HW, C] (or [HW, C]); w_a: [C, L]. The attention map is
    softmax over HW of X @ w_a, and tokens are its transpose applied to X.
    """
    x3, squeezed = _lift(x)
    if w_a.ndim != 2 or w_a.shape[0] != x3.shape[2]:
        raise ShapeError(f"w_a {w_a.shape} does not match channels {x3.shape[2]}")
    tokens, a = _attend(x3, matmul(x3, w_a))
    return _drop(tokens, squeezed), _drop(a, squeezed)


def recurrent_tokenize(x, t_prev, w_t2r):
    """Group pixels with filters derived from the previous block's tokens.

    x: [N, HW, C]; t_prev: [N, L, Ctok]; w_t2r: [Ctok, C]. The grouping
    weights are W_R = t_prev @ w_t2r, applied as X @ W_R^T so each token
    column scores every pixel.
    """
    x3, squeezed = _lift(x)
    t3, t_squeezed = _lift(t_prev)
    if squeezed != t_squeezed:
        raise ShapeError("x and t_prev must both be batched or both single-sample")
    if w_t2r.ndim != 2 or w_t2r.shape != (t3.shape[2], x3.shape[2]):
        raise ShapeError(
            f"w_t2r {w_t2r.shape} must map token channels {t3.shape[2]} "
            f"to feature channels {x3.shape[2]}")
    w_r = matmul(t3, w_t2r)
    tokens, a = _attend(x3, matmul(x3, T.transpose(w_r, (0, 2, 1))))
    return _drop(tokens, squeezed), _drop(a, squeezed)


def pooling_tokenize(x_nchw, l):
    """Spatially downsample an NCHW map to sqrt(L) x sqrt(L) token cells."""
    side = int(round(l ** 0.5))
    if side * side != l:
        raise ShapeError(f"token count {l} is not a perfect square")
    from .nn_ops import adaptive_avg_pool2d

    n, c = x_nchw.shape[:2]
    pooled = adaptive_avg_pool2d(x_nchw, (side, side))
    grid = T.reshape(pooled, (n, c, l))
    return T.transpose(grid, (0, 2, 1))


def _normalize_channels(arr):
    """Unit-normalize along axis 1, accumulating channel-by-channel.

    The fixed accumulation order (ascending channel) keeps results
    reproducible against a straight-line reference implementation; a zero
    vector stays zero instead of dividing by its norm.
    """
    sq = np.zeros((arr.shape[0],) + arr.shape[2:], dtype=arr.dtype)
    for c in range(arr.shape[1]):
        sq += arr[:, c] ** 2
    norm = np.sqrt(sq)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(norm > 0, arr / norm, 0.0)
    return out


def kmeans_centroids(x_nchw, l, niter=KMEANS_ITERS):
    """Lloyd's algorithm over unit-normalized pixels; returns [N, C, L].

    Centroids start as the adaptive-average downsample of the map to L
    positions. Each iteration assigns every pixel to its nearest centroid
    (ties to the lowest centroid index), recomputes centroids as member
    means in ascending pixel order, and re-normalizes. A cluster with no
    members keeps its previous centroid. The result is a constant: no
    gradient flows through it.
    """
    if niter < 0:
        raise ValueError("niter must be >= 0")
    if x_nchw.ndim != 4:
        raise ShapeError("kmeans_centroids expects an NCHW map")
    n, c, h, w = x_nchw.shape
    side = int(round(l ** 0.5))
    if side * side == l and side <= min(h, w):
        grid = (side, side)
    elif l <= w:
        grid = (1, l)
    else:
        raise ShapeError(f"cannot seed {l} centroids from a {h}x{w} map")

    data = x_nchw.data if isinstance(x_nchw, Tensor) else np.asarray(x_nchw)
    init = np.empty((n, c) + grid, dtype=data.dtype)
    for i, (h0, h1) in enumerate(adaptive_bins(h, grid[0])):
        for j, (w0, w1) in enumerate(adaptive_bins(w, grid[1])):
            init[:, :, i, j] = data[:, :, h0:h1, w0:w1].mean(axis=(2, 3))

    u = _normalize_channels(init.reshape(n, c, l))           # N, C, L
    xn = _normalize_channels(data.reshape(n, c, h * w))      # N, C, P
    x_pc = np.ascontiguousarray(xn.transpose(0, 2, 1))       # N, P, C
    p = h * w

    for _ in range(niter):
        dist = np.zeros((n, p, l), dtype=data.dtype)
        for ch in range(c):
            dist += (xn[:, ch, :, None] - u[:, ch, None, :]) ** 2
        assign = dist.argmin(axis=2)                          # first min wins ties

        sums = np.zeros((n, l, c), dtype=data.dtype)
        for pix in range(p):
            sums[np.arange(n), assign[:, pix]] += x_pc[:, pix]
        counts = np.zeros((n, l), dtype=np.int64)
        for sample in range(n):
            counts[sample] = np.bincount(assign[sample], minlength=l)

        means = np.where(counts[:, :, None] > 0, sums / np.maximum(counts, 1)[:, :, None],
                         u.transpose(0, 2, 1))
        u = _normalize_channels(means.transpose(0, 2, 1))

    return Tensor(u)


def cluster_attend(x, w_k):
    """Attention tokenization against fixed grouping weights w_k [N, C, L]."""
    x3, squeezed = _lift(x)
    if w_k.ndim == 2:
        w_k = T.reshape(w_k, (1,) + w_k.shape)
    if w_k.shape[0] != x3.shape[0] or w_k.shape[1] != x3.shape[2]:
        raise ShapeError(f"w_k {w_k.shape} does not match features {x3.shape}")
    tokens, a = _attend(x3, matmul(x3, w_k))
    return _drop(tokens, squeezed), _drop(a, squeezed)


def cluster_tokenize(x, hw, l, niter=KMEANS_ITERS):
    """Tokenize with k-means centroids of the map's own pixels as filters.

    x: [N, HW, C] (or [HW, C]); hw: the (H, W) spatial extents behind the
    flattened pixel axis. Gradients flow through the attention and the
    token average but not through the centroids.
    """
    x3, squeezed = _lift(x)
    h, w = hw
    n, p, c = x3.shape
    if h * w != p:
        raise ShapeError(f"hw {hw} does not match pixel count {p}")
    as_map = T.transpose(x3, (0, 2, 1)).reshape((n, c, h, w))
    w_k = kmeans_centroids(as_map.detach(), l, niter=niter)
    tokens, a = cluster_attend(x3, w_k)
    return _drop(tokens, squeezed), _drop(a, squeezed)
