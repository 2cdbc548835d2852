"""Export per-token spatial attention as grayscale (or colormapped) images.

For each token block and each token l, the attention column over pixels is
reshaped to the block's H x W map, min-max normalized to [0, 255], and
written as binary PGM named block{k}_token{l}.pgm (1-based indices). A flat
column (max equals min) is written as all zeros.
"""

from __future__ import annotations

import os

import numpy as np

from .pgm import colormap_blue_red, read_image, write_pgm, write_ppm
from .tensor import Tensor, no_grad

__all__ = ["visualize_attention", "attention_to_gray"]


def attention_to_gray(column, hw):
    """Min-max normalize one attention column into a uint8 H x W image."""
    h, w = hw
    grid = np.asarray(column, dtype=np.float64).reshape(h, w)
    lo, hi = grid.min(), grid.max()
    if hi - lo <= 1e-12:
        return np.zeros((h, w), dtype=np.uint8)
    return np.round(255.0 * (grid - lo) / (hi - lo)).astype(np.uint8)


def visualize_attention(model, image_path, out_dir, colormap=False, log=None):
    """Run the model on one image and write every token's attention map.

    Returns the list of written file paths. Raises ValueError if the model
    has no attention-producing tokenizer blocks.
    """
    image = read_image(image_path)
    if image.shape[1] != model.input_hw or image.shape[2] != model.input_hw:
        raise ValueError(f"image is {image.shape[1]}x{image.shape[2]}, "
                         f"model wants {model.input_hw}x{model.input_hw}")
    with no_grad():
        _, attention = model.forward(Tensor(image[None]), training=False,
                                     want_attention=True)
    attention = [(name, a, hw) for name, a, hw in attention if a is not None]
    if not attention:
        raise ValueError("model has no tokenizer that emits an attention map")

    os.makedirs(out_dir, exist_ok=True)
    written = []
    for k, (_, a, hw) in enumerate(attention, start=1):
        cols = a.data[0]                      # HW x L
        for l in range(cols.shape[1]):
            column = cols[:, l]
            if log is not None:
                log(f"block{k} token{l + 1} column sum {column.sum():.8f}")
            gray = attention_to_gray(column, hw)
            if colormap:
                path = os.path.join(out_dir, f"block{k}_token{l + 1}.ppm")
                write_ppm(path, colormap_blue_red(gray.astype(np.float64) / 255.0))
            else:
                path = os.path.join(out_dir, f"block{k}_token{l + 1}.pgm")
                write_pgm(path, gray)
            written.append(path)
    return written
