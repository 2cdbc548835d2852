"""vtnet: token-based vision blocks on a from-scratch autodiff engine.

The package provides a small dense-tensor library with reverse-mode
differentiation, tokenizers that compress feature maps into a handful of
visual tokens, a token-space transformer and a token-to-pixel projector,
builders for token-augmented ResNet classifiers and a token feature
pyramid, an analytic FLOP/parameter cost model, and a desk-scale training
and visualization harness.
"""

from .tensor import (NumericsError, ShapeError, Tensor, fd_check,
                     finite_checks, grad, no_grad)
from .models import (ModelSpec, build_vt_fpn, build_vt_resnet, forward,
                     head_classify, toy_spec)
from .accounting import count_flops, count_params, reduction_report
from .checkpoint import load_checkpoint, save_checkpoint
from .train import train_toy

__version__ = "0.1.0"

__all__ = [
    "Tensor", "NumericsError", "ShapeError", "grad", "fd_check",
    "no_grad", "finite_checks",
    "ModelSpec", "build_vt_resnet", "build_vt_fpn", "forward",
    "head_classify", "toy_spec",
    "count_params", "count_flops", "reduction_report",
    "save_checkpoint", "load_checkpoint", "train_toy",
    "__version__",
]
