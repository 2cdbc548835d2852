"""Finite-difference verification of every differentiable building block.

Each entry builds a small float64 instance, forms a smooth scalar loss over
the block's outputs, and compares analytic gradients against central
differences. The clustering tokenizer is checked through its attention
surface with the centroids held fixed, because centroids are constants of
the differentiation by design.
"""

from __future__ import annotations

import numpy as np

from .projector import ProjectorParams, project_tokens
from .tensor import Tensor, fd_check
from .tokenizers import (cluster_attend, filter_tokenize, kmeans_centroids,
                         pooling_tokenize, recurrent_tokenize)
from .transformer import TransformerParams, transformer_forward
from .vt_block import VTBlock, VTBlockConfig

__all__ = ["gradcheck_suite", "GRADCHECK_TOLERANCE"]

GRADCHECK_TOLERANCE = 1e-4


def _t(rng, *shape):
    return Tensor(rng.normal(0.0, 1.0, shape), requires_grad=True)


def _sq(out):
    return (out * out).mean()


def _filter_case(rng):
    x = _t(rng, 2, 9, 3)
    w_a = _t(rng, 3, 2)

    def loss(_):
        tokens, attn = filter_tokenize(x, w_a)
        return _sq(tokens) + _sq(attn)

    return loss, [x, w_a]


def _recurrent_case(rng):
    x = _t(rng, 2, 9, 3)
    t_prev = _t(rng, 2, 2, 4)
    w = _t(rng, 4, 3)

    def loss(_):
        tokens, attn = recurrent_tokenize(x, t_prev, w)
        return _sq(tokens) + _sq(attn)

    return loss, [x, t_prev, w]


def _pooling_case(rng):
    x = _t(rng, 2, 3, 6, 6)

    def loss(_):
        return _sq(pooling_tokenize(x, 4))

    return loss, [x]


def _cluster_case(rng):
    x = _t(rng, 1, 9, 3)
    # centroids are constants of the differentiation; freeze them up front
    w_k = kmeans_centroids(Tensor(x.data.transpose(0, 2, 1).reshape(1, 3, 3, 3)), 2, niter=2)

    def loss(_):
        tokens, attn = cluster_attend(x, w_k)
        return _sq(tokens) + _sq(attn)

    return loss, [x]


def _attention_case(rng):
    t = _t(rng, 3, 4)
    k = _t(rng, 4, 4)
    q = _t(rng, 4, 4)
    from .transformer import token_self_attention

    def loss(_):
        return _sq(token_self_attention(t, k, q))

    return loss, [t, k, q]


def _ffn_case(rng):
    t = _t(rng, 3, 4)
    f1 = _t(rng, 4, 5)
    f2 = _t(rng, 5, 4)
    from .transformer import token_ffn

    def loss(_):
        return _sq(token_ffn(t, f1, f2))

    return loss, [t, f1, f2]


def _projector_case(rng):
    x = _t(rng, 2, 6, 3)
    t = _t(rng, 2, 2, 4)
    params = ProjectorParams.create(3, 4, rng=rng, dtype=np.float64)

    def loss(_):
        return _sq(project_tokens(x, t, params))

    return loss, [x, t] + [p for _, p in params.tensors()]


def _block_case(rng):
    cfg = VTBlockConfig(c_in=3, c_out=4, c_tok=4, tokens=2, tokenizer="filter")
    block = VTBlock(cfg, rng=rng, dtype=np.float64)
    x = _t(rng, 1, 3, 3, 3)
    params = [x] + [p for _, p in block.named_params()]

    def loss(_):
        x_out, tokens, _ = block.forward(x)
        return _sq(x_out) + _sq(tokens)

    return loss, params


def _chain_case(rng):
    cfg1 = VTBlockConfig(c_in=3, c_out=3, c_tok=4, tokens=2, tokenizer="filter")
    cfg2 = VTBlockConfig(c_in=3, c_out=3, c_tok=4, tokens=2, tokenizer="recurrent")
    b1 = VTBlock(cfg1, rng=rng, dtype=np.float64)
    b2 = VTBlock(cfg2, rng=rng, dtype=np.float64)
    x = _t(rng, 1, 3, 3, 3)
    params = [x] + [p for _, p in b1.named_params()] + [p for _, p in b2.named_params()]

    def loss(_):
        x1, t1, _ = b1.forward(x)
        x2, t2, _ = b2.forward(x1, t_prev=t1)
        return _sq(x2) + _sq(t2)

    return loss, params


CASES = [
    ("filter_tokenizer", _filter_case),
    ("recurrent_tokenizer", _recurrent_case),
    ("pooling_tokenizer", _pooling_case),
    ("cluster_tokenizer", _cluster_case),
    ("token_self_attention", _attention_case),
    ("token_ffn", _ffn_case),
    ("projector", _projector_case),
    ("vt_block", _block_case),
    ("vt_block_chain", _chain_case),
]


def gradcheck_suite(seed=0, eps=1e-5, samples=48):
    """Run every case; returns a list of (name, max relative error)."""
    results = []
    for name, build in CASES:
        rng = np.random.default_rng(seed)
        loss, params = build(rng)
        err = fd_check(loss, params, eps=eps, samples=samples,
                       rng=np.random.default_rng(seed + 1))
        results.append((name, err))
    return results
