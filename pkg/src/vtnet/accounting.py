"""Analytic cost model: parameter and multiply-accumulate counts per layer.

Counting is purely structural; no forward pass runs. One multiply-accumulate
is one FLOP. Convolutions cost output_pixels * k^2 * c_in * c_out, matrix
products cost M*K*N, and elementwise/normalization/softmax/pooling work is
counted as zero (it is dominated at these shapes). Parameters cover weights,
biases, and batch-norm affine pairs; running statistics are excluded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .layers import BasicBlock, Bottleneck
from .models import ModelGraph, VTFPN
from .vt_block import VTBlock

__all__ = ["LayerCost", "CostReport", "ReductionReport",
           "count_params", "count_flops", "reduction_report",
           "fpn_conv_baseline_flops"]

STAGE_ORDER = ("1", "2", "3", "4", "5", "head")


@dataclass
class LayerCost:
    name: str
    stage: str
    params: int
    macs: int


@dataclass
class CostReport:
    rows: list
    input_hw: int

    def stage_totals(self):
        totals = {}
        for row in self.rows:
            p, m = totals.get(row.stage, (0, 0))
            totals[row.stage] = (p + row.params, m + row.macs)
        return totals

    @property
    def total_params(self):
        return sum(row.params for row in self.rows)

    @property
    def total_macs(self):
        return sum(row.macs for row in self.rows)

    def to_json_dict(self):
        stages = {stage: {"flops": m, "params": p}
                  for stage, (p, m) in self.stage_totals().items()}
        return {"input_hw": self.input_hw, "stages": stages,
                "total": {"flops": self.total_macs, "params": self.total_params}}

    def to_text(self):
        width = max([len(r.name) for r in self.rows] + [len("layer")])
        lines = [f"{'layer':<{width}}  {'stage':<5}  {'params':>12}  {'flops':>14}"]
        for row in self.rows:
            lines.append(f"{row.name:<{width}}  {row.stage:<5}  {row.params:>12,}  {row.macs:>14,}")
        lines.append("-" * len(lines[0]))
        for stage, (p, m) in sorted(self.stage_totals().items(),
                                    key=lambda kv: STAGE_ORDER.index(kv[0])):
            lines.append(f"{'stage ' + stage:<{width}}  {'':<5}  {p:>12,}  {m:>14,}")
        lines.append(f"{'total':<{width}}  {'':<5}  {self.total_params:>12,}  {self.total_macs:>14,}")
        return "\n".join(lines)


def _conv_out(hw, k, stride, pad):
    return (hw + 2 * pad - k) // stride + 1


def _conv_rows(rows, name, stage, hw, c_in, c_out, k, stride=1, pad=0, bias=False):
    out_hw = _conv_out(hw, k, stride, pad)
    params = k * k * c_in * c_out + (c_out if bias else 0)
    rows.append(LayerCost(name, stage, params, out_hw * out_hw * k * k * c_in * c_out))
    return out_hw


def _bn_row(rows, name, stage, c):
    rows.append(LayerCost(name, stage, 2 * c, 0))


def _block_rows(rows, prefix, stage, block, hw):
    if isinstance(block, BasicBlock):
        out_hw = _conv_rows(rows, f"{prefix}.conv1", stage, hw, block.c_in, block.c_out,
                            3, block.stride, 1)
        _bn_row(rows, f"{prefix}.bn1", stage, block.c_out)
        _conv_rows(rows, f"{prefix}.conv2", stage, out_hw, block.c_out, block.c_out, 3, 1, 1)
        _bn_row(rows, f"{prefix}.bn2", stage, block.c_out)
        if block.downsample is not None:
            _conv_rows(rows, f"{prefix}.downsample", stage, hw, block.c_in, block.c_out,
                       1, block.stride, 0)
            _bn_row(rows, f"{prefix}.downsample_bn", stage, block.c_out)
        return out_hw
    if isinstance(block, Bottleneck):
        _conv_rows(rows, f"{prefix}.conv1", stage, hw, block.c_in, block.c_mid, 1, 1, 0)
        _bn_row(rows, f"{prefix}.bn1", stage, block.c_mid)
        out_hw = _conv_rows(rows, f"{prefix}.conv2", stage, hw, block.c_mid, block.c_mid,
                            3, block.stride, 1)
        _bn_row(rows, f"{prefix}.bn2", stage, block.c_mid)
        _conv_rows(rows, f"{prefix}.conv3", stage, out_hw, block.c_mid, block.c_out, 1, 1, 0)
        _bn_row(rows, f"{prefix}.bn3", stage, block.c_out)
        if block.downsample is not None:
            _conv_rows(rows, f"{prefix}.downsample", stage, hw, block.c_in, block.c_out,
                       1, block.stride, 0)
            _bn_row(rows, f"{prefix}.downsample_bn", stage, block.c_out)
        return out_hw
    raise TypeError(f"cannot cost a {type(block).__name__}")


def _vt_block_rows(rows, prefix, stage, block, hw):
    cfg = block.cfg
    pixels = hw * hw
    l = cfg.tokens
    if block.channel_adapter is not None:
        rows.append(LayerCost(f"{prefix}.channel_adapter", stage,
                              cfg.c_out * cfg.c_in, pixels * cfg.c_in * cfg.c_out))
    attend = 2 * pixels * cfg.c_out * l
    if cfg.tokenizer == "filter":
        rows.append(LayerCost(f"{prefix}.tokenizer", stage, cfg.c_out * l, attend))
    elif cfg.tokenizer == "recurrent":
        rows.append(LayerCost(f"{prefix}.tokenizer", stage, cfg.c_tok * cfg.c_out,
                              l * cfg.c_tok * cfg.c_out + attend))
    elif cfg.tokenizer == "cluster":
        rows.append(LayerCost(f"{prefix}.tokenizer", stage, 0, attend))
    else:
        rows.append(LayerCost(f"{prefix}.tokenizer", stage, 0, 0))
    if block.token_adapter is not None:
        rows.append(LayerCost(f"{prefix}.token_adapter", stage,
                              cfg.c_out * cfg.c_tok, l * cfg.c_out * cfg.c_tok))
    d_attn = block.transformer.k.shape[1]
    d_ff = block.transformer.f1.shape[1]
    t_params = 2 * cfg.c_tok * d_attn + 2 * cfg.c_tok * d_ff
    t_macs = l * t_params + l * l * d_attn + l * l * cfg.c_tok
    rows.append(LayerCost(f"{prefix}.transformer", stage, t_params, t_macs))
    if block.projector is not None:
        p_params = cfg.c_out * cfg.c_out + 2 * cfg.c_tok * cfg.c_out
        p_macs = (pixels * cfg.c_out * cfg.c_out
                  + 2 * l * cfg.c_tok * cfg.c_out
                  + 2 * pixels * l * cfg.c_out)
        rows.append(LayerCost(f"{prefix}.projector", stage, p_params, p_macs))
    return hw


def _classifier_rows(model, input_hw):
    rows = []
    stem = model.stem
    hw = _conv_rows(rows, "stage1.conv1", "1", input_hw, stem.conv.c_in, stem.conv.c_out,
                    stem.conv.k, stem.conv.stride, stem.conv.pad)
    _bn_row(rows, "stage1.bn1", "1", stem.c_out)
    if stem.pool is not None:
        hw = _conv_out(hw, stem.pool.k, stem.pool.stride, stem.pool.pad)
    for label, blocks in model.stages:
        for i, block in enumerate(blocks):
            prefix = f"stage{label}.block{i}"
            if isinstance(block, VTBlock):
                hw = _vt_block_rows(rows, prefix, label, block, hw)
            else:
                hw = _block_rows(rows, prefix, label, block, hw)
    if model.head is not None:
        fc = model.head
        params = fc.n_in * fc.n_out + (fc.n_out if fc.bias is not None else 0)
        rows.append(LayerCost("head.fc", "head", params, fc.n_in * fc.n_out))
    return rows


def _fpn_rows(model, input_hw):
    rows = _classifier_rows(model.backbone, input_hw)
    hw = {label: None for label, _ in model.backbone.stages}
    # recover per-stage output resolutions from the backbone walk
    res = input_hw
    stem = model.backbone.stem
    res = _conv_out(res, stem.conv.k, stem.conv.stride, stem.conv.pad)
    if stem.pool is not None:
        res = _conv_out(res, stem.pool.k, stem.pool.stride, stem.pool.pad)
    for label, blocks in model.backbone.stages:
        for block in blocks:
            res = _conv_out(res, 3, block.stride, 1)
        hw[label] = res

    l = model.tokens_per_level
    ct = model.token_channels
    for lev in model.levels:
        c = model.level_channels[lev]
        pixels = hw[str(lev)] ** 2
        rows.append(LayerCost(f"head.fpn.level{lev}.tokenizer", "head",
                              c * l, 2 * pixels * c * l))
        if model.token_adapters[lev] is not None:
            rows.append(LayerCost(f"head.fpn.level{lev}.token_adapter", "head",
                                  c * ct, l * c * ct))
    total_tokens = l * len(model.levels)
    d_attn = model.transformer.k.shape[1]
    d_ff = model.transformer.f1.shape[1]
    t_params = 2 * ct * d_attn + 2 * ct * d_ff
    rows.append(LayerCost("head.fpn.transformer", "head", t_params,
                          total_tokens * t_params + total_tokens ** 2 * (d_attn + ct)))
    for lev in model.levels:
        c = model.level_channels[lev]
        pixels = hw[str(lev)] ** 2
        rows.append(LayerCost(f"head.fpn.level{lev}.projector", "head",
                              c * c + 2 * ct * c,
                              pixels * c * c + 2 * total_tokens * ct * c
                              + 2 * pixels * total_tokens * c))
    for lev in model.levels:
        c = model.level_channels[lev]
        pixels = hw[str(lev)] ** 2
        conv = model.merge_convs[lev]
        rows.append(LayerCost(f"head.seg.level{lev}", "head",
                              c * conv.c_out + conv.c_out, pixels * c * conv.c_out))
    out_pixels = hw[str(model.levels[0])] ** 2
    rows.append(LayerCost("head.seg.out", "head",
                          model.out_conv.c_in * model.out_conv.c_out + model.out_conv.c_out,
                          out_pixels * model.out_conv.c_in * model.out_conv.c_out))
    return rows


def _report(model, input_hw):
    input_hw = input_hw or model.input_hw
    if isinstance(model, VTFPN):
        return CostReport(_fpn_rows(model, input_hw), input_hw)
    if isinstance(model, ModelGraph):
        return CostReport(_classifier_rows(model, input_hw), input_hw)
    raise TypeError(f"cannot cost a {type(model).__name__}")


def count_params(model):
    """Per-layer and per-stage parameter counts for a built model."""
    report = _report(model, None)
    counted = report.total_params
    actual = sum(t.size for _, t in model.named_params())
    if counted != actual:
        raise RuntimeError(f"cost model counted {counted} params, model holds {actual}")
    return report


def count_flops(model, input_hw=None):
    """Per-layer and per-stage multiply-accumulate counts at a resolution."""
    return _report(model, input_hw)


@dataclass
class ReductionReport:
    stage_flops_ratio: dict
    stage_params_ratio: dict
    total_flops_ratio: float
    total_params_ratio: float

    def to_json_dict(self):
        return {
            "stage_flops_ratio": self.stage_flops_ratio,
            "stage_params_ratio": self.stage_params_ratio,
            "total_flops_ratio": self.total_flops_ratio,
            "total_params_ratio": self.total_params_ratio,
        }

    def to_text(self):
        lines = [f"{'stage':<6}  {'flops ratio':>12}  {'params ratio':>12}"]
        for stage in STAGE_ORDER:
            if stage in self.stage_flops_ratio:
                lines.append(f"{stage:<6}  {self.stage_flops_ratio[stage]:>12.3f}"
                             f"  {self.stage_params_ratio[stage]:>12.3f}")
        lines.append(f"{'total':<6}  {self.total_flops_ratio:>12.3f}"
                     f"  {self.total_params_ratio:>12.3f}")
        return "\n".join(lines)


def _ratio(a, b):
    return a / b if b else float("inf")


def reduction_report(vt_model, baseline_model, input_hw=None):
    """Stage-wise and total baseline/vt cost ratios for one family."""
    if vt_model.family != baseline_model.family:
        raise ValueError(f"family mismatch: {vt_model.family} vs {baseline_model.family}")
    vt = count_flops(vt_model, input_hw)
    base = count_flops(baseline_model, input_hw)
    vt_stages, base_stages = vt.stage_totals(), base.stage_totals()
    flops, params = {}, {}
    for stage in vt_stages:
        bp, bm = base_stages[stage]
        vp, vm = vt_stages[stage]
        flops[stage] = _ratio(bm, vm)
        params[stage] = _ratio(bp, vp)
    return ReductionReport(
        stage_flops_ratio=flops,
        stage_params_ratio=params,
        total_flops_ratio=_ratio(base.total_macs, vt.total_macs),
        total_params_ratio=_ratio(base.total_params, vt.total_params),
    )


def fpn_conv_baseline_flops(level_channels, level_hw, merge_channels=256):
    """MACs of a conventional convolutional pyramid at the same channels.

    Per level: a 1x1 lateral to ``merge_channels`` plus a 3x3 refinement at
    the level's resolution. Used to compare the token path against a purely
    convolutional merge at matched widths.
    """
    total = 0
    for c, hw in zip(level_channels, level_hw):
        pixels = hw * hw
        total += pixels * c * merge_channels
        total += pixels * 9 * merge_channels * merge_channels
    return total
