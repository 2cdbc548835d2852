"""Projector: fuse transformer output tokens back into the pixel map.

Each pixel queries the tokens; a per-pixel softmax over the L tokens mixes
a value projection of the tokens into the pixel's residual. Tokens may have
a different channel width than the feature map, so values pass through
w_v: [Ctok, C]; with Ctok == C and w_v the identity this reduces to adding
the raw tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, matmul, softmax_axis

__all__ = ["ProjectorParams", "project_tokens"]


@dataclass
class ProjectorParams:
    """Weights of one projector: queries from pixels, keys/values from tokens.

    w_q: [C, C] pixel query map; w_k: [Ctok, C] token key map;
    w_v: [Ctok, C] token value map back to feature channels.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor

    @classmethod
    def create(cls, c_feat, c_tok, rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng)

        def w(rows, cols):
            scale = 1.0 / np.sqrt(rows)
            return Tensor(rng.normal(0.0, scale, (rows, cols)).astype(dtype),
                          requires_grad=True)

        return cls(w_q=w(c_feat, c_feat), w_k=w(c_tok, c_feat), w_v=w(c_tok, c_feat))

    def tensors(self):
        return [("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)]


def _lift(x):
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected rank 2 or 3 operand, got rank {x.ndim}")


def project_tokens(x_in, tokens, params):
    """Residual token-to-pixel fusion.

    x_in: [N, HW, C]; tokens: [N, L, Ctok]. Per pixel, softmax over the L
    token key-query scores weights a value projection of the tokens:
    x_out = x_in + softmax_L((x_in w_q)(tokens w_k)^T) (tokens w_v).
    """
    x3, squeezed = _lift(x_in)
    t3, t_squeezed = _lift(tokens)
    if squeezed != t_squeezed:
        raise ShapeError("x_in and tokens must both be batched or both single-sample")
    c = x3.shape[2]
    if params.w_q.shape != (c, c):
        raise ShapeError(f"w_q {params.w_q.shape} does not match feature channels {c}")
    c_tok = t3.shape[2]
    if params.w_k.shape != (c_tok, c) or params.w_v.shape != (c_tok, c):
        raise ShapeError(
            f"w_k/w_v {params.w_k.shape}/{params.w_v.shape} must map token "
            f"channels {c_tok} to feature channels {c}")

    queries = matmul(x3, params.w_q)
    keys = matmul(t3, params.w_k)
    weights = softmax_axis(matmul(queries, T.transpose(keys, (0, 2, 1))), axis=2)
    values = matmul(t3, params.w_v)
    out = x3 + matmul(weights, values)
    return T.reshape(out, out.shape[1:]) if squeezed else out
