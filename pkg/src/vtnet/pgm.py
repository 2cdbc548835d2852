"""Minimal binary PGM (P5) and PPM (P6) image I/O, 8-bit only."""

from __future__ import annotations

import numpy as np

__all__ = ["write_pgm", "write_ppm", "read_image", "ImageFormatError"]


class ImageFormatError(ValueError):
    """Not a readable binary PGM/PPM file."""


def write_pgm(path, gray):
    """Write a [H, W] uint8 array as binary PGM."""
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError("PGM wants a 2-D grayscale array")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_ppm(path, rgb):
    """Write a [H, W, 3] uint8 array as binary PPM."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM wants an [H, W, 3] array")
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def _read_tokens(data, count):
    """Whitespace/comment-aware header tokenizer; returns (tokens, offset)."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ImageFormatError("unexpected end of header")
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            start = i
            while i < len(data) and not data[i : i + 1].isspace():
                i += 1
            tokens.append(data[start:i])
    return tokens, i + 1  # single whitespace after maxval precedes raster


def read_image(path):
    """Read binary PGM/PPM into float32 [3, H, W] in [0, 1] (gray replicated)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: only binary PGM (P5) and PPM (P6) are supported")
    channels = 1 if data[:2] == b"P5" else 3
    tokens, offset = _read_tokens(data, 4)
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported")
    need = w * h * channels
    raster = data[offset : offset + need]
    if len(raster) != need:
        raise ImageFormatError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, channels)
    arr = arr.astype(np.float32) / 255.0
    if channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def colormap_blue_red(values):
    """Map [0, 1] values linearly from blue (low) to red (high) as uint8 RGB."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    r = np.round(255 * v).astype(np.uint8)
    b = np.round(255 * (1.0 - v)).astype(np.uint8)
    g = np.zeros_like(r)
    return np.stack([r, g, b], axis=-1)
