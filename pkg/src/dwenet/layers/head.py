"""Embedding stage, initial convolution and the fully connected classifier head."""

from __future__ import annotations

import logging
from typing import List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from dwenet import ops
from dwenet.errors import ShapeError
from dwenet.layers.base import Module, ModuleList
from dwenet.layers.conv import ConvLayer
from dwenet.optim import he_init
from dwenet.tensor import Tensor

logger = logging.getLogger(__name__)


class Embedding(Module):
    """Lookup table `[V, d]`; row 0 is PAD and stays zero."""

    def __init__(self, vectors: npt.ArrayLike, trainable: bool = True, pad_id: int = 0) -> None:
        super().__init__()
        table = np.array(vectors, copy=True)
        if table.ndim != 2:
            raise ShapeError(f"embedding table must be [V, d], got shape {table.shape}")
        table[pad_id] = 0.0
        self.pad_id = pad_id
        self.trainable = trainable
        self.weight = self.add_parameter("weight", Tensor(table, requires_grad=trainable))

    @property
    def vocab_size(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def pad_mask(self) -> npt.NDArray[np.bool_]:
        """Update mask that freezes the PAD row."""
        mask = np.ones(self.weight.shape, dtype=bool)
        mask[self.pad_id] = False
        return mask

    def forward(self, token_ids: npt.ArrayLike) -> Tensor:
        return ops.embedding_lookup(token_ids, self.weight, self.pad_id)


class InitialConv(Module):
    """
    Width-3 convolution spanning the whole embedding dimension.

    The `[b, s, d]` embedding is turned into `[b, d, s]` and padded with one
    zero channel on each side, so a width-3 kernel over `d + 2` channels is a
    3 x (d + 2) kernel with padding 1 in both directions.
    """

    def __init__(self, embed_dim: int, out_channels: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.embed_dim = embed_dim
        self.out_channels = out_channels
        self.conv = ConvLayer(embed_dim + 2, out_channels, 3, 1, rng)
        self.add_module("conv", self.conv)

    def forward(self, embedded: Tensor) -> Tensor:
        if embedded.ndim != 3 or embedded.shape[-1] != self.embed_dim:
            raise ShapeError(
                f"initial conv expects [b, s, {self.embed_dim}], got {embedded.shape}"
            )
        x = ops.permute(embedded, (0, 2, 1))
        x = ops.pad(x, ((0, 0), (1, 1), (0, 0)))
        return self.conv(x)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_parameter(
            "weight", he_init((out_features, in_features), in_features, rng)
        )
        self.bias = self.add_parameter("bias", Tensor(np.zeros(out_features), requires_grad=True))

    def forward(self, x: Tensor) -> Tensor:
        return ops.affine(x, self.weight, self.bias)


class ClassifierHead(Module):
    """
    Global max and average pooling, concatenated max-first, followed by
    fully connected layers with leaky ReLU and dropout, ending in 2 logits.
    """

    def __init__(
        self,
        in_channels: int,
        hidden_dims: Sequence[int],
        num_classes: int,
        dropout: float,
        rng: np.random.Generator,
        dropout_rng: np.random.Generator,
        leaky_slope: float = ops.LEAKY_SLOPE,
    ) -> None:
        super().__init__()
        self.leaky_slope = leaky_slope
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {dropout}")
        self.in_channels = in_channels
        self.dropout = dropout
        self.dropout_rng = dropout_rng
        self.hidden = ModuleList()
        self.add_module("fc", self.hidden)
        width = 2 * in_channels
        for dim in hidden_dims:
            self.hidden.append(Linear(width, dim, rng))
            width = dim
        self.out = Linear(width, num_classes, rng)
        self.add_module("out", self.out)

    @property
    def pooled_features(self) -> int:
        return 2 * self.in_channels

    def pool(self, x: Tensor) -> Tensor:
        """`[b, C, s]` (or a single `[C, s]`) -> `[b, 2C]`."""
        if x.ndim == 2:
            x = ops.reshape(x, (1, *x.shape))
        if x.ndim != 3:
            raise ShapeError(f"head expects [b, C, s], got {x.shape}")
        pooled = ops.concat_channels([ops.pool(x, "global_max"), ops.pool(x, "global_avg")])
        return ops.reshape(pooled, (x.shape[0], 2 * x.shape[1]))

    def forward(self, x: Tensor, trace: List[Tuple[str, Tuple[int, ...]]] | None = None) -> Tensor:
        h = self.pool(x)
        if trace is not None:
            trace.append(("pooled", h.shape))
        for layer in self.hidden:
            h = ops.leaky_relu(layer(h), self.leaky_slope)
            h = ops.dropout(h, self.dropout, self.training, self.dropout_rng)
        logits = self.out(h)
        if trace is not None:
            trace.append(("logits", logits.shape))
        return logits
