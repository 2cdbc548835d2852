"""One visual-token block: tokenizer, token transformer, optional projector.

The block consumes an NCHW feature map, optionally adapts its channel count
with a pointwise convolution, tokenizes the HW x C view, adapts token
channels with a bias-free linear map when they differ from the transformer
width, runs the token transformer, and (when enabled) projects the tokens
back onto the map. It returns the (possibly refreshed) map, the output
tokens for the next block, and the tokenizer's attention map when the
tokenizer produces one (the pooling variant does not).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn_ops import conv2d
from .projector import ProjectorParams, project_tokens
from .tensor import ShapeError, Tensor, matmul
from .tokenizers import (KMEANS_ITERS, cluster_tokenize, filter_tokenize,
                         pooling_tokenize, recurrent_tokenize)
from .transformer import TransformerParams, transformer_forward

__all__ = ["VTBlockConfig", "VTBlock"]

TOKENIZERS = ("filter", "recurrent", "pooling", "cluster")


@dataclass
class VTBlockConfig:
    """Shape and wiring of one visual-token block."""

    c_in: int
    c_out: int
    c_tok: int
    tokens: int
    tokenizer: str = "filter"
    use_projector: bool = True
    d_attn: int | None = None
    d_ff: int | None = None
    kmeans_iters: int = KMEANS_ITERS

    def __post_init__(self):
        if self.tokens < 1:
            raise ValueError("need at least one token")
        if self.tokenizer not in TOKENIZERS:
            raise ValueError(f"unknown tokenizer {self.tokenizer!r}")


class VTBlock:
    """Parameter container and forward pass for one visual-token block."""

    def __init__(self, cfg, rng=None, dtype=np.float32):
        rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.dtype = dtype

        def w(rows, cols):
            scale = 1.0 / np.sqrt(rows)
            return Tensor(rng.normal(0.0, scale, (rows, cols)).astype(dtype),
                          requires_grad=True)

        self.channel_adapter = None
        if cfg.c_in != cfg.c_out:
            he = np.sqrt(2.0 / cfg.c_in)
            self.channel_adapter = Tensor(
                rng.normal(0.0, he, (cfg.c_out, cfg.c_in, 1, 1)).astype(dtype),
                requires_grad=True)

        self.w_a = w(cfg.c_out, cfg.tokens) if cfg.tokenizer == "filter" else None
        self.w_t2r = w(cfg.c_tok, cfg.c_out) if cfg.tokenizer == "recurrent" else None
        self.token_adapter = w(cfg.c_out, cfg.c_tok) if cfg.c_out != cfg.c_tok else None
        self.transformer = TransformerParams.create(
            cfg.c_tok, d_attn=cfg.d_attn, d_ff=cfg.d_ff, rng=rng, dtype=dtype)
        self.projector = (ProjectorParams.create(cfg.c_out, cfg.c_tok, rng=rng, dtype=dtype)
                          if cfg.use_projector else None)

    def named_params(self, prefix=""):
        def tag(name):
            return f"{prefix}.{name}" if prefix else name

        if self.channel_adapter is not None:
            yield tag("channel_adapter.weight"), self.channel_adapter
        if self.w_a is not None:
            yield tag("tokenizer.w_a"), self.w_a
        if self.w_t2r is not None:
            yield tag("tokenizer.w_t2r"), self.w_t2r
        if self.token_adapter is not None:
            yield tag("token_adapter.weight"), self.token_adapter
        for name, t in self.transformer.tensors():
            yield tag(f"transformer.{name}"), t
        if self.projector is not None:
            for name, t in self.projector.tensors():
                yield tag(f"projector.{name}"), t

    def named_buffers(self, prefix=""):
        return iter(())

    def forward(self, x_nchw, t_prev=None):
        """Run the block. Returns (map NCHW, tokens [N, L, Ctok], attention or None)."""
        cfg = self.cfg
        if (t_prev is None) == (cfg.tokenizer == "recurrent"):
            raise ShapeError("recurrent tokenizer needs t_prev; others must not get one")

        if self.channel_adapter is not None:
            x_nchw = conv2d(x_nchw, self.channel_adapter)
        n, c, h, w = x_nchw.shape
        x_flat = T.transpose(T.reshape(x_nchw, (n, c, h * w)), (0, 2, 1))

        attention = None
        if cfg.tokenizer == "filter":
            tokens, attention = filter_tokenize(x_flat, self.w_a)
        elif cfg.tokenizer == "recurrent":
            tokens, attention = recurrent_tokenize(x_flat, t_prev, self.w_t2r)
        elif cfg.tokenizer == "pooling":
            tokens = pooling_tokenize(x_nchw, cfg.tokens)
        else:
            tokens, attention = cluster_tokenize(x_flat, (h, w), cfg.tokens,
                                                 niter=cfg.kmeans_iters)

        if self.token_adapter is not None:
            tokens = matmul(tokens, self.token_adapter)
        tokens = transformer_forward(tokens, self.transformer)

        if self.projector is not None:
            x_flat = project_tokens(x_flat, tokens, self.projector)
            x_nchw = T.reshape(T.transpose(x_flat, (0, 2, 1)), (n, c, h, w))
        return x_nchw, tokens, attention
