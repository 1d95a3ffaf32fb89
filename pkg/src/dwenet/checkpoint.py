"""
Binary checkpoint format.

Layout, all integers little-endian u32:

    b"DWENETCK" | version | meta_len | meta JSON (sorted keys, UTF-8)
    | tensor_count | tensor records ... | SHA-256 of everything before it

A tensor record is `name_len | name | ndim | dims... | float32 values`.
Records are written in sorted name order, so saving a loaded checkpoint
reproduces the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from dwenet.data import EmbeddingMatrix, Vocabulary
from dwenet.errors import (
    CheckpointConfigError,
    CheckpointError,
    CheckpointVersionError,
    ChecksumError,
)
from dwenet.model import Model, ModelConfig
from dwenet.optim import AdamState
from dwenet.tensor import Array

logger = logging.getLogger(__name__)

MAGIC = b"DWENETCK"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")
_DIGEST = 32


@dataclass
class Checkpoint:
    model: Model
    vocab: Optional[Vocabulary] = None
    optimizer: Optional[AdamState] = None


def _state_tensors(model: Model) -> Dict[str, Array]:
    tensors: Dict[str, Array] = {name: p.data for name, p in model.named_parameters().items()}
    for name, state in model.named_states().items():
        tensors[f"{name}.running_mean"] = state.running_mean
        tensors[f"{name}.running_var"] = state.running_var
    return tensors


def encode_checkpoint(
    model: Model,
    vocab: Optional[Vocabulary] = None,
    optimizer: Optional[AdamState] = None,
) -> bytes:
    meta: Dict[str, Any] = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "embedding_trainable": model.embedding.trainable,
        "vocab_size": model.embedding.vocab_size,
        "vocab": list(vocab.tokens) if vocab is not None else None,
        "rng": model.dropout_rng.bit_generator.state,
        "adam_t": optimizer.t if optimizer is not None else None,
    }
    tensors = _state_tensors(model)
    if optimizer is not None:
        for name, m in optimizer.m.items():
            tensors[f"adam.m.{name}"] = m
        for name, v in optimizer.v.items():
            tensors[f"adam.v.{name}"] = v

    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts: List[bytes] = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(meta_bytes)), meta_bytes]
    parts.append(_U32.pack(len(tensors)))
    for name in sorted(tensors):
        values = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(values.ndim))
        parts.extend(_U32.pack(dim) for dim in values.shape)
        parts.append(values.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(
    model: Model,
    path: str | Path,
    vocab: Optional[Vocabulary] = None,
    optimizer: Optional[AdamState] = None,
) -> Path:
    """Write a checkpoint atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    payload = encode_checkpoint(model, vocab, optimizer)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.info("Saved checkpoint to %s (%d bytes)", path, len(payload))
    return path


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChecksumError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        value: int = _U32.unpack(self.take(4))[0]
        return value


def decode_checkpoint(
    payload: bytes, expected_config: Optional[ModelConfig] = None
) -> Checkpoint:
    """
    Rebuild a model from checkpoint bytes.

    Raises:
        CheckpointVersionError: Unsupported format version
        ChecksumError: Truncated or corrupted contents
        CheckpointConfigError: Stored config differs from `expected_config`
            or a tensor does not fit the rebuilt model
    """
    if len(payload) < len(MAGIC) + 4 or payload[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a dwenet checkpoint")
    version: int = _U32.unpack(payload[len(MAGIC):len(MAGIC) + 4])[0]
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version}, this build reads {FORMAT_VERSION}"
        )
    if len(payload) < len(MAGIC) + 4 + _DIGEST:
        raise ChecksumError("checkpoint is truncated")
    body, digest = payload[:-_DIGEST], payload[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch (truncated or corrupted file)")

    reader = _Reader(body)
    reader.take(len(MAGIC) + 4)
    meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
    tensors: Dict[str, Array] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = values.astype(np.float32)

    config = ModelConfig.from_dict(meta["config"])
    if expected_config is not None and expected_config != config:
        diffs = [
            key for key, value in expected_config.to_dict().items()
            if config.to_dict().get(key) != value
        ]
        raise CheckpointConfigError(f"checkpoint config differs in: {', '.join(diffs)}")

    vectors = np.zeros((meta["vocab_size"], config.embed_dim), dtype=np.float32)
    embedding = EmbeddingMatrix(vectors, trainable=meta["embedding_trainable"])
    model = Model(config, embedding, meta["seed"])
    _restore(model, tensors)
    model.dropout_rng.bit_generator.state = meta["rng"]
    model.eval()

    vocab = Vocabulary(meta["vocab"]) if meta.get("vocab") is not None else None
    optimizer = None
    if meta.get("adam_t") is not None:
        optimizer = AdamState(
            m={k[len("adam.m."):]: v.copy() for k, v in tensors.items() if k.startswith("adam.m.")},
            v={k[len("adam.v."):]: v.copy() for k, v in tensors.items() if k.startswith("adam.v.")},
            t=int(meta["adam_t"]),
        )
    return Checkpoint(model, vocab, optimizer)


def _restore(model: Model, tensors: Mapping[str, Array]) -> None:
    expected = _state_tensors(model)
    stored = {k for k in tensors if not k.startswith("adam.")}
    missing = sorted(set(expected) - stored)
    extra = sorted(stored - set(expected))
    if missing or extra:
        raise CheckpointConfigError(
            f"checkpoint tensors do not match the model (missing {missing[:3]}, extra {extra[:3]})"
        )
    for name, param in model.named_parameters().items():
        _check_shape(name, param.data.shape, tensors[name])
        param.data = tensors[name].astype(param.data.dtype, copy=True)
    for name, state in model.named_states().items():
        for field_name in ("running_mean", "running_var"):
            key = f"{name}.{field_name}"
            current = getattr(state, field_name)
            _check_shape(key, current.shape, tensors[key])
            setattr(state, field_name, tensors[key].astype(current.dtype, copy=True))


def _check_shape(name: str, shape: Tuple[int, ...], value: Array) -> None:
    if tuple(value.shape) != tuple(shape):
        raise CheckpointConfigError(f"{name}: stored shape {value.shape}, model expects {shape}")


def load_checkpoint(path: str | Path, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    """Read and verify a checkpoint file; see `decode_checkpoint`."""
    payload = Path(path).read_bytes()
    checkpoint = decode_checkpoint(payload, expected_config)
    logger.debug("Loaded checkpoint %s", path)
    return checkpoint
