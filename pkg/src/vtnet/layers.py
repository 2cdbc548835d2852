"""Backbone layers: convolutions, batch norm, linear maps, residual blocks.

Layers own their parameter tensors (names are stable, definition-ordered)
and any running statistics. Residual blocks follow the common reference
topology: 3x3 conv pairs for basic blocks, 1x1/3x3/1x1 for bottlenecks with
the stride on the 3x3, batch norm after every convolution, and a projection
shortcut wherever shape changes.
"""

from __future__ import annotations

import numpy as np

from .nn_ops import batch_norm, conv2d, max_pool2d
from .tensor import Tensor, matmul, relu

__all__ = ["Conv2d", "BatchNorm2d", "Linear", "MaxPool2d", "BasicBlock", "Bottleneck"]


class Conv2d:
    def __init__(self, c_in, c_out, k, stride=1, pad=0, bias=False, rng=None,
                 dtype=np.float32):
        rng = np.random.default_rng(rng)
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.pad = stride, pad
        he = np.sqrt(2.0 / (c_in * k * k))
        self.weight = Tensor(rng.normal(0.0, he, (c_out, c_in, k, k)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None

    def named_params(self, prefix=""):
        yield f"{prefix}.weight" if prefix else "weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias" if prefix else "bias", self.bias

    def named_buffers(self, prefix=""):
        return iter(())

    def forward(self, x, training=False):
        out = conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            out = out + self.bias.reshape((1, self.c_out, 1, 1))
        return out


class BatchNorm2d:
    def __init__(self, c, dtype=np.float32):
        self.c = c
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def named_params(self, prefix=""):
        yield f"{prefix}.gamma" if prefix else "gamma", self.gamma
        yield f"{prefix}.beta" if prefix else "beta", self.beta

    def named_buffers(self, prefix=""):
        yield f"{prefix}.running_mean" if prefix else "running_mean", self.running_mean
        yield f"{prefix}.running_var" if prefix else "running_var", self.running_var

    def forward(self, x, training=False):
        return batch_norm(x, self.gamma, self.beta, self.running_mean,
                          self.running_var, training)


class Linear:
    def __init__(self, n_in, n_out, bias=True, rng=None, dtype=np.float32):
        rng = np.random.default_rng(rng)
        self.n_in, self.n_out = n_in, n_out
        self.weight = Tensor(rng.normal(0.0, 0.01, (n_in, n_out)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True) if bias else None

    def named_params(self, prefix=""):
        yield f"{prefix}.weight" if prefix else "weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias" if prefix else "bias", self.bias

    def named_buffers(self, prefix=""):
        return iter(())

    def forward(self, x, training=False):
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class MaxPool2d:
    def __init__(self, k, stride, pad=0):
        self.k, self.stride, self.pad = k, stride, pad

    def named_params(self, prefix=""):
        return iter(())

    def named_buffers(self, prefix=""):
        return iter(())

    def forward(self, x, training=False):
        return max_pool2d(x, self.k, stride=self.stride, pad=self.pad)


class _Composite:
    """Shared recursion over child layers held in self._children."""

    def named_params(self, prefix=""):
        for name, child in self._children:
            yield from child.named_params(f"{prefix}.{name}" if prefix else name)

    def named_buffers(self, prefix=""):
        for name, child in self._children:
            yield from child.named_buffers(f"{prefix}.{name}" if prefix else name)


class BasicBlock(_Composite):
    def __init__(self, c_in, c_out, stride=1, rng=None, dtype=np.float32):
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.conv1 = Conv2d(c_in, c_out, 3, stride=stride, pad=1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(c_out, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, pad=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(c_out, dtype=dtype)
        self.downsample = None
        self.downsample_bn = None
        if stride != 1 or c_in != c_out:
            self.downsample = Conv2d(c_in, c_out, 1, stride=stride, rng=rng, dtype=dtype)
            self.downsample_bn = BatchNorm2d(c_out, dtype=dtype)
        self._children = [("conv1", self.conv1), ("bn1", self.bn1),
                          ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.downsample is not None:
            self._children += [("downsample", self.downsample),
                               ("downsample_bn", self.downsample_bn)]

    def forward(self, x, training=False):
        out = relu(self.bn1.forward(self.conv1.forward(x), training))
        out = self.bn2.forward(self.conv2.forward(out), training)
        shortcut = x
        if self.downsample is not None:
            shortcut = self.downsample_bn.forward(self.downsample.forward(x), training)
        return relu(out + shortcut)


class Bottleneck(_Composite):
    def __init__(self, c_in, c_mid, c_out, stride=1, rng=None, dtype=np.float32):
        self.c_in, self.c_mid, self.c_out, self.stride = c_in, c_mid, c_out, stride
        self.conv1 = Conv2d(c_in, c_mid, 1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(c_mid, dtype=dtype)
        self.conv2 = Conv2d(c_mid, c_mid, 3, stride=stride, pad=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(c_mid, dtype=dtype)
        self.conv3 = Conv2d(c_mid, c_out, 1, rng=rng, dtype=dtype)
        self.bn3 = BatchNorm2d(c_out, dtype=dtype)
        self.downsample = None
        self.downsample_bn = None
        if stride != 1 or c_in != c_out:
            self.downsample = Conv2d(c_in, c_out, 1, stride=stride, rng=rng, dtype=dtype)
            self.downsample_bn = BatchNorm2d(c_out, dtype=dtype)
        self._children = [("conv1", self.conv1), ("bn1", self.bn1),
                          ("conv2", self.conv2), ("bn2", self.bn2),
                          ("conv3", self.conv3), ("bn3", self.bn3)]
        if self.downsample is not None:
            self._children += [("downsample", self.downsample),
                               ("downsample_bn", self.downsample_bn)]

    def forward(self, x, training=False):
        out = relu(self.bn1.forward(self.conv1.forward(x), training))
        out = relu(self.bn2.forward(self.conv2.forward(out), training))
        out = self.bn3.forward(self.conv3.forward(out), training)
        shortcut = x
        if self.downsample is not None:
            shortcut = self.downsample_bn.forward(self.downsample.forward(x), training)
        return relu(out + shortcut)
