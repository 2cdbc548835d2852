"""Self-attention over visual tokens.

Token interaction weights are input-dependent: a key-query product over the
L tokens, row-softmaxed so each output token mixes a convex combination of
input tokens, followed by a two-layer pointwise feed-forward. There is no
positional term, no extra normalization, and no scaling of the key-query
product; a single attention head acts on all token channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, matmul, relu, softmax_axis

__all__ = ["TransformerParams", "token_self_attention", "token_ffn", "transformer_forward"]


@dataclass
class TransformerParams:
    """Weights of one token-transformer block.

    k, q: [Ctok, d_attn] key/query maps (d_attn defaults to Ctok).
    f1:   [Ctok, d_ff] and f2: [d_ff, Ctok] feed-forward maps.
    """

    k: Tensor
    q: Tensor
    f1: Tensor
    f2: Tensor

    @classmethod
    def create(cls, c_tok, d_attn=None, d_ff=None, rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng)
        d_attn = d_attn or c_tok
        d_ff = d_ff or c_tok

        def w(rows, cols):
            scale = 1.0 / np.sqrt(rows)
            return Tensor(rng.normal(0.0, scale, (rows, cols)).astype(dtype),
                          requires_grad=True)

        return cls(k=w(c_tok, d_attn), q=w(c_tok, d_attn),
                   f1=w(c_tok, d_ff), f2=w(d_ff, c_tok))

    def tensors(self):
        return [("k", self.k), ("q", self.q), ("f1", self.f1), ("f2", self.f2)]


def _lift(t):
    if t.ndim == 2:
        return T.reshape(t, (1,) + t.shape), True
    if t.ndim == 3:
        return t, False
    raise ShapeError(f"expected rank 2 or 3 token set, got rank {t.ndim}")


def _drop(t, squeezed):
    return T.reshape(t, t.shape[1:]) if squeezed else t


def token_self_attention(t_in, k, q):
    """Residual self-attention: t + softmax_rows((tK)(tQ)^T) t."""
    t3, squeezed = _lift(t_in)
    c = t3.shape[2]
    if k.shape[0] != c or q.shape[0] != c or k.shape[1] != q.shape[1]:
        raise ShapeError(f"key/query {k.shape}/{q.shape} do not fit token channels {c}")
    keys = matmul(t3, k)
    queries = matmul(t3, q)
    scores = softmax_axis(matmul(keys, T.transpose(queries, (0, 2, 1))), axis=2)
    out = t3 + matmul(scores, t3)
    return _drop(out, squeezed)


def token_ffn(t, f1, f2):
    """Residual pointwise feed-forward: t + relu(t f1) f2."""
    t3, squeezed = _lift(t)
    c = t3.shape[2]
    if f1.shape[0] != c or f2.shape != (f1.shape[1], c):
        raise ShapeError(f"feed-forward {f1.shape}/{f2.shape} do not fit token channels {c}")
    out = t3 + matmul(relu(matmul(t3, f1)), f2)
    return _drop(out, squeezed)


def transformer_forward(t_in, params):
    """Self-attention followed by the feed-forward, both residual."""
    attended = token_self_attention(t_in, params.k, params.q)
    return token_ffn(attended, params.f1, params.f2)
