"""Torch modules for truth-table networks.

The binary activation uses a straight-through estimator: the forward pass
is the hard threshold with the sgn(0) = +1 tie rule, the backward pass is
the identity within |x| <= 1 and zero outside. An optional low-bitwidth
gradient stage quantizes activation gradients on the way back, useful when
mimicking reduced-precision training.
"""

from __future__ import annotations

import torch
from torch import nn


class _BinActSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x: torch.Tensor) -> torch.Tensor:
        ctx.save_for_backward(x)
        return (x >= 0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad: torch.Tensor) -> torch.Tensor:
        (x,) = ctx.saved_tensors
        return grad * (x.abs() <= 1).to(grad.dtype)


def bin_act(x: torch.Tensor) -> torch.Tensor:
    return _BinActSTE.apply(x)


class _GradQuant(torch.autograd.Function):
    """Identity forward; k-bit uniform quantization of the gradient."""

    @staticmethod
    def forward(ctx, x: torch.Tensor, bits: int) -> torch.Tensor:
        ctx.bits = bits
        return x

    @staticmethod
    def backward(ctx, grad: torch.Tensor):
        levels = 2 ** ctx.bits - 1
        scale = grad.abs().max().clamp_min(1e-12) * 2
        normal = grad / scale + 0.5
        quant = torch.round(normal.clamp(0, 1) * levels) / levels
        return (quant - 0.5) * scale, None


def grad_quant(x: torch.Tensor, bits: int | None) -> torch.Tensor:
    if bits is None:
        return x
    return _GradQuant.apply(x, bits)


class LTTBlock(nn.Module):
    """conv -> bn -> selu -> 1x1 conv -> bn -> bin_act, grouped throughout."""

    def __init__(self, in_channels: int, out_channels: int,
                 kernel: tuple[int, int], stride: tuple[int, int],
                 groups: int = 1, padding: int = 0, expansion: int = 8):
        super().__init__()
        hidden = in_channels * expansion
        self.conv1 = nn.Conv2d(in_channels, hidden, kernel, stride,
                               padding=padding, groups=groups, bias=False)
        self.bn1 = nn.BatchNorm2d(hidden)
        self.conv2 = nn.Conv2d(hidden, out_channels, 1, groups=groups, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.selu(self.bn1(self.conv1(x)))
        return bin_act(self.bn2(self.conv2(h)))


class TruthTableNet(nn.Module):
    """One truth-table block over a bit tensor, then a float linear layer."""

    def __init__(self, input_shape: tuple[int, int, int], out_channels: int,
                 kernel: tuple[int, int], stride: tuple[int, int], classes: int,
                 groups: int = 1, expansion: int = 8,
                 grad_bits: int | None = None):
        super().__init__()
        self.input_shape = input_shape
        self.grad_bits = grad_bits
        c, h, w = input_shape
        self.block = LTTBlock(c, out_channels, kernel, stride,
                              groups=groups, expansion=expansion)
        oh = (h - kernel[0]) // stride[0] + 1
        ow = (w - kernel[1]) // stride[1] + 1
        self.features = out_channels * oh * ow
        self.linear = nn.Linear(self.features, classes, bias=False)

    def forward(self, bits: torch.Tensor) -> torch.Tensor:
        x = bits.reshape(bits.shape[0], *self.input_shape)
        feats = self.block(x).flatten(1)
        return self.linear(grad_quant(feats, self.grad_bits))
