"""The dweNet text classifier and its structural ablation variants."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
import numpy.typing as npt

from dwenet import ops
from dwenet.data import PAD_ID, UNK_ID, EmbeddingMatrix
from dwenet.errors import ConfigError, ShapeError
from dwenet.layers import (
    ClassifierHead,
    DenseBlock,
    Embedding,
    InitialConv,
    Module,
    ModuleList,
    PlainBlock,
    ResidualBlock,
    Transition,
)
from dwenet.tensor import Array, Tensor, no_grad

logger = logging.getLogger(__name__)

Connectivity = Literal["dense", "residual", "plain"]
Trace = List[Tuple[str, Tuple[int, ...]]]

NUM_CLASSES = 2
NUM_BLOCKS = 4
MIN_SIGNAL = 2 ** (NUM_BLOCKS - 1)


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture hyperparameters.

    For `plain` connectivity `growth_rate` is the fixed width of every layer;
    for `dense` and `residual` it is the per-layer channel growth k.
    """

    connectivity: Connectivity = "dense"
    block_sizes: Tuple[int, ...] = (6, 12, 24, 16)
    growth_rate: int = 32
    init_channels: int = 64
    embed_dim: int = 50
    max_len: int = 64
    head_dims: Tuple[int, ...] = (512, 128)
    leaky_slope: float = ops.LEAKY_SLOPE
    dropout_rate: float = 0.2
    embedding_trainable: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))
        object.__setattr__(self, "head_dims", tuple(int(h) for h in self.head_dims))
        if self.connectivity not in ("dense", "residual", "plain"):
            raise ConfigError(f"unknown connectivity: {self.connectivity!r}", "model.connectivity")
        if len(self.block_sizes) != NUM_BLOCKS or any(b < 1 for b in self.block_sizes):
            raise ConfigError(
                f"block_sizes must be {NUM_BLOCKS} positive ints, got {list(self.block_sizes)}",
                "model.block_sizes",
            )
        for key in ("growth_rate", "init_channels", "embed_dim"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive", f"model.{key}")
        if self.max_len < MIN_SIGNAL:
            raise ConfigError(
                f"max_len must be at least {MIN_SIGNAL} to survive {NUM_BLOCKS - 1} transitions",
                "model.max_len",
            )
        if any(h < 1 for h in self.head_dims):
            raise ConfigError("head_dims must be positive", "model.head_dims")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)", "model.dropout_rate")
        if self.leaky_slope < 0:
            raise ConfigError("leaky_slope must be non-negative", "model.leaky_slope")

    @property
    def num_conv_layers(self) -> int:
        """Initial conv plus every block layer; transitions and head excluded."""
        return 1 + sum(self.block_sizes)

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["block_sizes"] = list(self.block_sizes)
        out["head_dims"] = list(self.head_dims)
        return out

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown model key: {unknown[0]}", f"model.{unknown[0]}")
        return cls(**values)


PRESETS: Dict[str, Dict[str, Any]] = {
    "dwenet": {},
    "densenet8": {"block_sizes": (1, 1, 1, 1), "growth_rate": 4, "dropout_rate": 0.0},
    "densenet8_gr32": {"block_sizes": (1, 1, 1, 1), "growth_rate": 32, "dropout_rate": 0.0},
    "densenet16": {"block_sizes": (4, 4, 4, 4), "growth_rate": 4, "dropout_rate": 0.0},
    "densenet28": {"block_sizes": (3, 4, 6, 3), "growth_rate": 4, "dropout_rate": 0.0},
    "resnet8": {
        "connectivity": "residual", "block_sizes": (1, 1, 1, 1), "growth_rate": 4,
        "dropout_rate": 0.0,
    },
    "cnn8": {
        "connectivity": "plain", "block_sizes": (1, 1, 1, 1), "growth_rate": 64,
        "dropout_rate": 0.0,
    },
}


def preset(name: str, **overrides: Any) -> ModelConfig:
    """Named architecture, with field overrides applied on top."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "model.preset")
    return ModelConfig(**{**PRESETS[name], **overrides})


@dataclass
class BlockPlan:
    """Channel bookkeeping for one block."""

    in_channels: int
    layers: int
    out_channels: int
    layer_inputs: List[int] = field(default_factory=list)


def block_plan(config: ModelConfig) -> List[BlockPlan]:
    """Input/output channels for each block, following the transition halving."""
    plans: List[BlockPlan] = []
    channels = config.init_channels
    k = config.growth_rate
    for b, size in enumerate(config.block_sizes):
        if config.connectivity == "dense":
            inputs = [channels + t * k for t in range(size)]
            out = channels + size * k
        elif config.connectivity == "residual":
            out = channels + size * k
            inputs = [out] * size
        else:
            inputs = [channels] + [k] * (size - 1)
            out = k
        plans.append(BlockPlan(channels, size, out, inputs))
        channels = out // 2 if b < NUM_BLOCKS - 1 else out
    return plans


class Model(Module):
    """
    embed -> initial conv -> (block, transition) x 3 -> block -> head.

    `forward` returns logits `[b, 2]`; use `predict_proba` for probabilities.
    """

    def __init__(self, config: ModelConfig, embedding: EmbeddingMatrix, seed: int = 0) -> None:
        super().__init__()
        if embedding.dim != config.embed_dim:
            raise ShapeError(
                f"embedding dimension {embedding.dim} does not match config embed_dim "
                f"{config.embed_dim}"
            )
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng([seed, 1])

        trainable = config.embedding_trainable and embedding.trainable
        self.embedding = Embedding(embedding.vectors, trainable=trainable, pad_id=PAD_ID)
        self.add_module("embedding", self.embedding)
        self.initial = InitialConv(config.embed_dim, config.init_channels, rng)
        self.add_module("initial", self.initial)

        self.blocks = ModuleList()
        self.transitions = ModuleList()
        self.add_module("blocks", self.blocks)
        self.add_module("transitions", self.transitions)
        channels = config.init_channels
        for b, size in enumerate(config.block_sizes):
            block = _make_block(config, channels, size, rng)
            self.blocks.append(block)
            channels = block.out_channels  # type: ignore[attr-defined]
            if b < NUM_BLOCKS - 1:
                transition = Transition(channels, rng)
                self.transitions.append(transition)
                channels = transition.out_channels

        self.head = ClassifierHead(
            channels, config.head_dims, NUM_CLASSES, config.dropout_rate,
            rng, self.dropout_rng, config.leaky_slope,
        )
        self.add_module("head", self.head)
        logger.debug(
            "Built %s model: %d conv layers, %d parameters",
            config.connectivity, config.num_conv_layers, parameter_count(self),
        )

    def trainable_parameters(self) -> Dict[str, Tensor]:
        return {name: p for name, p in self.named_parameters().items() if p.requires_grad}

    def update_masks(self) -> Dict[str, npt.NDArray[np.bool_]]:
        """Optimizer masks: the PAD embedding row is never updated."""
        if not self.embedding.weight.requires_grad:
            return {}
        return {"embedding.weight": self.embedding.pad_mask()}

    def forward(self, token_ids: npt.ArrayLike, trace: Optional[Trace] = None) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.ndim != 2 or ids.shape[1] != self.config.max_len:
            raise ShapeError(
                f"token ids must be [b, {self.config.max_len}], got shape {ids.shape}"
            )
        x = self.embedding(ids)
        if trace is not None:
            trace.append(("embedding", x.shape))
        x = self.initial(x)
        if trace is not None:
            trace.append(("initial", x.shape))
        for b, block in enumerate(self.blocks):
            x = block(x)
            if trace is not None:
                trace.append((f"block{b + 1}", x.shape))
            if b < len(self.transitions):
                x = self.transitions[b](x)
                if trace is not None:
                    trace.append((f"transition{b + 1}", x.shape))
        return self.head(x, trace)


def _make_block(
    config: ModelConfig, channels: int, size: int, rng: np.random.Generator
) -> Module:
    k = config.growth_rate
    if config.connectivity == "dense":
        return DenseBlock(channels, size, k, rng)
    if config.connectivity == "residual":
        return ResidualBlock(channels, size, channels + size * k, rng)
    return PlainBlock(channels, size, k, rng)


def model_param_init(config: ModelConfig, embedding: EmbeddingMatrix, seed: int = 0) -> Model:
    """Fresh model: He-initialized kernels, unit BN scale, zero shifts and biases."""
    return Model(config, embedding, seed)


def parameter_count(model: Module) -> int:
    """Trainable scalar count."""
    return sum(p.size for p in model.named_parameters().values() if p.requires_grad)


def predict_proba(model: Model, token_ids: npt.ArrayLike) -> Array:
    """Eval-mode class probabilities `[b, 2]`; the model's mode is restored afterwards."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            logits = model(token_ids)
    finally:
        model.train(was_training)
    return ops.softmax(logits.data)


def model_shape_trace(config: ModelConfig, s: Optional[int] = None) -> Trace:
    """
    Run one eval-mode forward pass on a dummy sequence and record the
    feature-map shape after every stage.
    """
    if s is not None:
        config = dataclasses.replace(config, max_len=s)
    vectors = np.zeros((2, config.embed_dim), dtype=np.float32)
    vectors[UNK_ID] = 1.0
    model = Model(config, EmbeddingMatrix(vectors, trainable=False), seed=0)
    model.eval()
    trace: Trace = []
    with no_grad():
        model(np.full((1, config.max_len), UNK_ID, dtype=np.int64), trace)
    return trace
