"""Model builders: ResNet classifiers, token-stage variants, and a token FPN.

A ModelGraph is an ordered collection of layers partitioned into stages
("1" for the stem through "5", plus "head") with a flat, unique parameter
namespace. The "vt" variant replaces stage 5's convolutions with
visual-token blocks and classifies from pooled tokens; the baseline keeps
the standard convolutional stage 5. The FPN variant tokenizes the feature
maps of stages 2-5, relates all tokens in one shared transformer, projects
them back per level, and emits stride-4 segmentation logits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .layers import BasicBlock, BatchNorm2d, Bottleneck, Conv2d, Linear, MaxPool2d
from .nn_ops import bilinear_upsample
from .tensor import ShapeError, Tensor, matmul, relu
from .transformer import TransformerParams, transformer_forward
from .projector import ProjectorParams, project_tokens
from .tokenizers import filter_tokenize
from .vt_block import VTBlock, VTBlockConfig

__all__ = [
    "ModelSpec",
    "ModelGraph",
    "VTFPN",
    "build_vt_resnet",
    "build_vt_fpn",
    "build_from_config",
    "head_classify",
    "forward",
    "toy_spec",
    "spec_from_config",
    "config_from_spec",
    "TOKEN_STAGE_INNER_DIM",
]

# Inner width of the token transformer's key/query and feed-forward maps in
# the full-size builders. Keeping the stage budget close to the convolutional
# stage it replaces requires a width well below the 1024 token channels.
TOKEN_STAGE_INNER_DIM = 736

FPN_TOKENS_PER_LEVEL = 8
FPN_MERGE_CHANNELS = 128

_RESNET = {
    "r18": dict(block="basic", counts=(2, 2, 2, 2), vt_blocks=2),
    "r34": dict(block="basic", counts=(3, 4, 6, 3), vt_blocks=3),
    "r50": dict(block="bottleneck", counts=(3, 4, 6, 3), vt_blocks=3),
    "r101": dict(block="bottleneck", counts=(3, 4, 23, 3), vt_blocks=3),
}
_BASIC_WIDTHS = (64, 128, 256, 512)
_BOTTLENECK_MIDS = (64, 128, 256, 512)
_BOTTLENECK_OUTS = (256, 512, 1024, 2048)

FAMILIES = tuple(_RESNET) + ("toy", "tiny")


@dataclass
class ModelSpec:
    """What to build: family, stage-5 flavor, and token configuration."""

    family: str
    variant: str = "vt"
    tokens: int = 16
    token_channels: int = 1024
    num_classes: int = 1000
    tokenizers: tuple = ()
    use_projector: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.variant not in ("baseline", "vt"):
            raise ValueError(f"unknown variant {self.variant!r}")
        self.tokenizers = tuple(self.tokenizers)
        if self.variant == "vt":
            n = vt_block_count(self.family)
            if not self.tokenizers:
                self.tokenizers = ("filter",) + ("recurrent",) * (n - 1)
            if len(self.tokenizers) != n:
                raise ValueError(f"{self.family} takes {n} tokenizers, got {len(self.tokenizers)}")
            if self.tokenizers[0] == "recurrent":
                raise ValueError("the first block has no previous tokens to recur on")


def vt_block_count(family):
    if family in _RESNET:
        return _RESNET[family]["vt_blocks"]
    return 2 if family == "toy" else 1


def toy_spec(num_classes=3, tokenizers=(), use_projector=True):
    """Reduced spec for the 64x64 synthetic-shapes harness."""
    return ModelSpec(family="toy", variant="vt", tokens=8, token_channels=64,
                     num_classes=num_classes, tokenizers=tokenizers,
                     use_projector=use_projector)


_CONFIG_FIELDS = ("family", "variant", "tokens", "token_channels", "num_classes", "tokenizers")


def config_from_spec(spec):
    d = asdict(spec)
    d["tokenizers"] = list(spec.tokenizers)
    return d


def spec_from_config(cfg):
    known = {k: cfg[k] for k in _CONFIG_FIELDS if k in cfg}
    if "use_projector" in cfg:
        known["use_projector"] = bool(cfg["use_projector"])
    if "family" not in known:
        raise ValueError("model config needs a 'family' field")
    return ModelSpec(**known)


class Stem:
    """Entry convolution, batch norm, relu, and an optional max pool."""

    def __init__(self, c_in, c_out, k, stride, pool, rng, dtype):
        self.conv = Conv2d(c_in, c_out, k, stride=stride, pad=k // 2, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(c_out, dtype=dtype)
        self.pool = MaxPool2d(3, 2, pad=1) if pool else None
        self.c_out = c_out

    def named_params(self, prefix):
        yield from self.conv.named_params(f"{prefix}.conv1")
        yield from self.bn.named_params(f"{prefix}.bn1")

    def named_buffers(self, prefix):
        yield from self.bn.named_buffers(f"{prefix}.bn1")

    def forward(self, x, training=False):
        out = relu(self.bn.forward(self.conv.forward(x), training))
        if self.pool is not None:
            out = self.pool.forward(out)
        return out


class ModelGraph:
    """Built classifier: stem, four residual/token stages, and a head."""

    def __init__(self, spec, stem, stages, head, input_hw, dtype):
        self.spec = spec
        self.family = spec.family
        self.variant = spec.variant
        self.stem = stem
        self.stages = stages          # list of (label, [blocks]) for "2".."5"
        self.head = head              # Linear or None
        self.input_hw = input_hw
        self.dtype = dtype

    def named_params(self):
        yield from self.stem.named_params("stage1")
        for label, blocks in self.stages:
            for i, block in enumerate(blocks):
                yield from block.named_params(f"stage{label}.block{i}")
        if self.head is not None:
            yield from self.head.named_params("head.fc")

    def named_buffers(self):
        yield from self.stem.named_buffers("stage1")
        for label, blocks in self.stages:
            for i, block in enumerate(blocks):
                yield from block.named_buffers(f"stage{label}.block{i}")

    def param_dict(self):
        out = dict(self.named_params())
        if len(out) != sum(1 for _ in self.named_params()):
            raise RuntimeError("duplicate parameter names")
        return out

    def config_dict(self):
        cfg = config_from_spec(self.spec)
        cfg["input_hw"] = self.input_hw
        return cfg

    def forward_features(self, x, training=False):
        """Stage outputs keyed by stage label ("1" includes the stem pool)."""
        feats = {}
        x = self.stem.forward(x, training)
        feats["1"] = x
        for label, blocks in self.stages:
            if label == "5" and self.variant == "vt":
                break
            for block in blocks:
                x = block.forward(x, training)
            feats[label] = x
        return feats

    def forward(self, x, training=False, want_attention=False):
        """Logits for an NCHW batch; optionally also per-block attention maps."""
        if x.shape[2] != self.input_hw or x.shape[3] != self.input_hw:
            raise ShapeError(f"expected {self.input_hw}x{self.input_hw} input, "
                             f"got {x.shape[2]}x{x.shape[3]}")
        attention = []
        x = self.stem.forward(x, training)
        tokens = None
        for label, blocks in self.stages:
            if label == "5" and self.variant == "vt":
                for i, block in enumerate(blocks):
                    t_prev = tokens if block.cfg.tokenizer == "recurrent" else None
                    x, tokens, a = block.forward(x, t_prev=t_prev)
                    if want_attention:
                        hw = (x.shape[2], x.shape[3])
                        attention.append((f"block{i + 1}", a, hw))
            else:
                for block in blocks:
                    x = block.forward(x, training)
        if self.variant == "vt":
            logits = head_classify(tokens, self.head)
        else:
            pooled = x.mean(axis=(2, 3))
            logits = self.head.forward(pooled, training)
        if want_attention:
            return logits, attention
        return logits


def head_classify(tokens, fc):
    """Average the tokens and apply the fully connected classifier."""
    axis = 1 if tokens.ndim == 3 else 0
    return fc.forward(tokens.mean(axis=axis))


def forward(model, batch, training=False):
    """Deterministic forward pass of a built model on an NCHW batch."""
    return model.forward(batch, training=training)


def _stage_plan(family):
    """Per-stage (kind, width/mid, out, count, stride) for stages 2..5."""
    if family in _RESNET:
        layout = _RESNET[family]
        strides = (1, 2, 2, 2)
        if layout["block"] == "basic":
            return [("basic", None, _BASIC_WIDTHS[i], layout["counts"][i], strides[i])
                    for i in range(4)]
        return [("bottleneck", _BOTTLENECK_MIDS[i], _BOTTLENECK_OUTS[i],
                 layout["counts"][i], strides[i]) for i in range(4)]
    if family == "toy":
        return [("basic", None, 16, 1, 2), ("basic", None, 32, 1, 2),
                ("basic", None, 64, 1, 2)]
    if family == "tiny":
        return [("basic", None, 8, 1, 1), ("basic", None, 16, 1, 2),
                ("basic", None, 32, 1, 2), ("basic", None, 64, 1, 2)]
    raise ValueError(family)


def _build_stem(family, rng, dtype):
    if family in _RESNET:
        return Stem(3, 64, 7, 2, pool=True, rng=rng, dtype=dtype), 224
    if family == "toy":
        return Stem(3, 8, 3, 1, pool=False, rng=rng, dtype=dtype), 64
    return Stem(3, 8, 3, 2, pool=True, rng=rng, dtype=dtype), 32


def build_vt_resnet(spec, seed=0, dtype=np.float32, input_hw=None):
    """Build a classifier ModelGraph for the given spec.

    The vt variant swaps stage 5 for visual-token blocks operating at the
    stage-4 channel width; the baseline keeps the convolutional stage 5 and
    a pooled-feature classifier head.
    """
    rng = np.random.default_rng(seed)
    stem, default_hw = _build_stem(spec.family, rng, dtype)
    input_hw = input_hw or default_hw

    plan = _stage_plan(spec.family)
    stages = []
    c = stem.c_out
    conv_stage_labels = [str(i + 2) for i in range(len(plan))]
    vt_label = "5"
    for label, (kind, mid, out, count, stride) in zip(conv_stage_labels, plan):
        if spec.variant == "vt" and label == vt_label:
            break
        blocks = []
        for i in range(count):
            s = stride if i == 0 else 1
            if kind == "basic":
                blocks.append(BasicBlock(c, out, stride=s, rng=rng, dtype=dtype))
            else:
                blocks.append(Bottleneck(c, mid, out, stride=s, rng=rng, dtype=dtype))
            c = out
        stages.append((label, blocks))

    if spec.variant == "vt":
        inner = TOKEN_STAGE_INNER_DIM if spec.family in _RESNET else None
        blocks = []
        for name in spec.tokenizers:
            cfg = VTBlockConfig(c_in=c, c_out=c, c_tok=spec.token_channels,
                                tokens=spec.tokens, tokenizer=name,
                                use_projector=spec.use_projector,
                                d_attn=inner, d_ff=inner)
            blocks.append(VTBlock(cfg, rng=rng, dtype=dtype))
        stages.append(("5", blocks))
        head = Linear(spec.token_channels, spec.num_classes, rng=rng, dtype=dtype)
    else:
        head = Linear(c, spec.num_classes, rng=rng, dtype=dtype)

    return ModelGraph(spec, stem, stages, head, input_hw, dtype)


class VTFPN:
    """Token-based feature pyramid for dense prediction.

    Each backbone level contributes a fixed number of tokens; one shared
    transformer relates tokens across levels; per-level projectors fuse the
    output tokens back into their maps; a light head merges the levels at
    stride 4 and emits class logits.
    """

    def __init__(self, backbone_spec, levels=(2, 3, 4, 5), num_classes=21,
                 tokens_per_level=FPN_TOKENS_PER_LEVEL, token_channels=1024,
                 seed=0, dtype=np.float32, input_hw=None):
        levels = tuple(sorted(levels))
        if not levels or any(l not in (2, 3, 4, 5) for l in levels):
            raise ValueError(f"levels must be drawn from stages 2..5, got {levels}")
        rng = np.random.default_rng(seed)
        spec = ModelSpec(family=backbone_spec.family, variant="baseline",
                         num_classes=backbone_spec.num_classes)
        self.backbone = build_vt_resnet(spec, seed=seed, dtype=dtype, input_hw=input_hw)
        self.backbone.head = None
        self.levels = levels
        self.num_classes = num_classes
        self.tokens_per_level = tokens_per_level
        self.token_channels = token_channels
        self.input_hw = self.backbone.input_hw
        self.dtype = dtype
        self.family = backbone_spec.family

        widths = {label: blocks[-1].c_out for label, blocks in self.backbone.stages}
        self.level_channels = {l: widths[str(l)] for l in levels}

        def w(rows, cols):
            scale = 1.0 / np.sqrt(rows)
            return Tensor(rng.normal(0.0, scale, (rows, cols)).astype(dtype),
                          requires_grad=True)

        self.w_a = {l: w(self.level_channels[l], tokens_per_level) for l in levels}
        self.token_adapters = {
            l: (w(self.level_channels[l], token_channels)
                if self.level_channels[l] != token_channels else None)
            for l in levels
        }
        inner = TOKEN_STAGE_INNER_DIM if token_channels >= TOKEN_STAGE_INNER_DIM else None
        self.transformer = TransformerParams.create(token_channels, d_attn=inner,
                                                    d_ff=inner, rng=rng, dtype=dtype)
        self.projectors = {l: ProjectorParams.create(self.level_channels[l],
                                                     token_channels, rng=rng, dtype=dtype)
                           for l in levels}
        self.merge_convs = {l: Conv2d(self.level_channels[l], FPN_MERGE_CHANNELS, 1,
                                      bias=True, rng=rng, dtype=dtype) for l in levels}
        self.out_conv = Conv2d(FPN_MERGE_CHANNELS, num_classes, 1, bias=True,
                               rng=rng, dtype=dtype)

    def named_params(self):
        for name, t in self.backbone.named_params():
            yield name, t
        for l in self.levels:
            yield f"head.fpn.level{l}.w_a", self.w_a[l]
            if self.token_adapters[l] is not None:
                yield f"head.fpn.level{l}.token_adapter", self.token_adapters[l]
        for name, t in self.transformer.tensors():
            yield f"head.fpn.transformer.{name}", t
        for l in self.levels:
            for name, t in self.projectors[l].tensors():
                yield f"head.fpn.level{l}.projector.{name}", t
        for l in self.levels:
            yield from self.merge_convs[l].named_params(f"head.seg.level{l}")
        yield from self.out_conv.named_params("head.seg.out")

    def named_buffers(self):
        yield from self.backbone.named_buffers()

    def param_dict(self):
        return dict(self.named_params())

    def config_dict(self):
        return {
            "model": "vt_fpn",
            "family": self.family,
            "levels": list(self.levels),
            "num_classes": self.num_classes,
            "tokens_per_level": self.tokens_per_level,
            "token_channels": self.token_channels,
            "input_hw": self.input_hw,
        }

    def forward(self, x, training=False, return_parts=False):
        """Stride-4 class logits; optionally also per-level fused maps and tokens."""
        feats = self.backbone.forward_features(x, training)
        flats, shapes = {}, {}
        token_sets = []
        for l in self.levels:
            m = feats[str(l)]
            n, c, h, w = m.shape
            shapes[l] = (n, c, h, w)
            flat = T.transpose(T.reshape(m, (n, c, h * w)), (0, 2, 1))
            flats[l] = flat
            tokens, _ = filter_tokenize(flat, self.w_a[l])
            if self.token_adapters[l] is not None:
                tokens = matmul(tokens, self.token_adapters[l])
            token_sets.append(tokens)
        all_tokens = T.concat(token_sets, axis=1)
        all_tokens = transformer_forward(all_tokens, self.transformer)

        fused = {}
        for l in self.levels:
            out_flat = project_tokens(flats[l], all_tokens, self.projectors[l])
            n, c, h, w = shapes[l]
            fused[l] = T.reshape(T.transpose(out_flat, (0, 2, 1)), (n, c, h, w))

        target = max(shapes[l][2] for l in self.levels)
        merged = None
        for l in self.levels:
            m = self.merge_convs[l].forward(fused[l], training)
            factor = target // m.shape[2]
            if factor > 1:
                m = bilinear_upsample(m, factor)
            merged = m if merged is None else merged + m
        logits = self.out_conv.forward(merged, training)
        if return_parts:
            return logits, fused, all_tokens
        return logits


def build_vt_fpn(backbone_spec, levels=(2, 3, 4, 5), num_classes=21, seed=0,
                 dtype=np.float32, input_hw=None):
    """Build a token FPN over the baseline backbone of the given spec."""
    return VTFPN(backbone_spec, levels=levels, num_classes=num_classes,
                 seed=seed, dtype=dtype, input_hw=input_hw)


def build_from_config(cfg, seed=0, dtype=np.float32):
    """Rebuild a model from a checkpoint/CLI config dictionary."""
    if cfg.get("model") == "vt_fpn":
        spec = ModelSpec(family=cfg["family"], variant="baseline",
                         num_classes=cfg.get("num_classes", 21))
        return VTFPN(spec, levels=tuple(cfg["levels"]),
                     num_classes=cfg.get("num_classes", 21),
                     tokens_per_level=cfg.get("tokens_per_level", FPN_TOKENS_PER_LEVEL),
                     token_channels=cfg.get("token_channels", 1024),
                     seed=seed, dtype=dtype, input_hw=cfg.get("input_hw"))
    spec = spec_from_config(cfg)
    return build_vt_resnet(spec, seed=seed, dtype=dtype, input_hw=cfg.get("input_hw"))


def load_config_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
