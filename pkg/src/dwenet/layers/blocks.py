"""Feature-extraction blocks: dense, residual and plain, plus transitions."""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from dwenet import ops
from dwenet.errors import ShapeError
from dwenet.layers.base import Module, ModuleList
from dwenet.layers.conv import ConvLayer, Projection
from dwenet.tensor import Tensor


class DenseBlock(Module):
    """
    Dense connectivity: layer t sees the block input concatenated with the
    outputs of layers 1..t-1 and contributes `growth_rate` channels.

    A block with n inputs and i layers outputs n + i*k channels.
    """

    def __init__(
        self, in_channels: int, num_layers: int, growth_rate: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.growth_rate = growth_rate
        self.layers = ModuleList()
        self.add_module("layers", self.layers)
        for t in range(num_layers):
            self.layers.append(ConvLayer(in_channels + t * growth_rate, growth_rate, 3, 1, rng))

    @property
    def out_channels(self) -> int:
        return self.in_channels + len(self.layers) * self.growth_rate

    def source_groups(self, target_layer: int) -> List[int]:
        """Channel counts feeding layer `target_layer` (1-based): n, then k per prior layer."""
        if not 1 <= target_layer <= len(self.layers):
            raise IndexError(f"layer {target_layer} outside 1..{len(self.layers)}")
        return [self.in_channels] + [self.growth_rate] * (target_layer - 1)

    def forward(self, x: Tensor) -> Tensor:
        features = [x]
        for layer in self.layers:
            features.append(layer(ops.concat_channels(features)))
        return ops.concat_channels(features)


class ResidualBlock(Module):
    """
    Residual connectivity at a fixed width: each layer's output is added to
    its input. A 1x1 projection maps the block input to `width` first when
    the channel counts differ.
    """

    def __init__(
        self, in_channels: int, num_layers: int, width: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.width = width
        self.projection: Optional[Projection] = None
        if in_channels != width:
            self.projection = Projection(in_channels, width, rng)
            self.add_module("projection", self.projection)
        self.layers = ModuleList()
        self.add_module("layers", self.layers)
        for _ in range(num_layers):
            self.layers.append(ConvLayer(width, width, 3, 1, rng))

    @property
    def out_channels(self) -> int:
        return self.width

    def forward(self, x: Tensor) -> Tensor:
        if self.projection is not None:
            x = self.projection(x)
        for layer in self.layers:
            x = ops.add(x, layer(x))
        return x


class PlainBlock(Module):
    """Sequential Conv-BN-ReLU layers with no skip path, `width` channels each."""

    def __init__(
        self, in_channels: int, num_layers: int, width: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.width = width
        self.layers = ModuleList()
        self.add_module("layers", self.layers)
        channels = in_channels
        for _ in range(num_layers):
            self.layers.append(ConvLayer(channels, width, 3, 1, rng))
            channels = width

    @property
    def out_channels(self) -> int:
        return self.width if len(self.layers) else self.in_channels

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class Transition(Module):
    """1x1 Conv-BN-ReLU to floor(c/2) channels, then kernel-2 average pooling."""

    def __init__(self, in_channels: int, rng: np.random.Generator) -> None:
        super().__init__()
        if in_channels < 2:
            raise ShapeError(f"transition needs at least 2 channels, got {in_channels}")
        self.in_channels = in_channels
        self.out_channels = in_channels // 2
        self.conv = ConvLayer(in_channels, self.out_channels, 1, 0, rng)
        self.add_module("conv", self.conv)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] < 2:
            raise ShapeError(f"transition needs a signal of length >= 2, got {x.shape[-1]}")
        return ops.pool(self.conv(x), "avg_k2")
