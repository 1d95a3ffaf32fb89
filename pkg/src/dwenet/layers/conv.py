"""Convolution layers: Conv -> BatchNorm -> ReLU, and plain projections."""

from __future__ import annotations

import numpy as np

from dwenet import ops
from dwenet.errors import ShapeError
from dwenet.layers.base import Module
from dwenet.optim import he_init
from dwenet.tensor import Tensor


class ConvLayer(Module):
    """
    A convolution layer as the network defines it: Conv, BatchNorm, ReLU.

    The convolution has no bias; the batch-norm shift plays that role.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        width: int,
        pad: int,
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.width = width
        self.pad = pad
        self.weight = self.add_parameter(
            "weight", he_init((out_channels, in_channels, width), in_channels * width, rng)
        )
        self.gamma = self.add_parameter(
            "bn_gamma", Tensor(np.ones(out_channels), requires_grad=True)
        )
        self.beta = self.add_parameter(
            "bn_beta", Tensor(np.zeros(out_channels), requires_grad=True)
        )
        self.bn = self.add_state("bn", ops.BatchNormState.initial(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2] != self.in_channels:
            raise ShapeError(
                f"layer expects {self.in_channels} input channels, got {x.shape[-2]}"
            )
        y = ops.conv_seq(x, self.weight, None, self.pad)
        y = ops.batchnorm(y, self.gamma, self.beta, self.bn, self.training)
        return ops.relu(y)


class Projection(Module):
    """Bias-free 1x1 convolution used to match channel counts on a skip path."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = self.add_parameter(
            "weight", he_init((out_channels, in_channels, 1), in_channels, rng)
        )

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_seq(x, self.weight, None, 0)
