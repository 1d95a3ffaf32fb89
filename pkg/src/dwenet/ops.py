"""Differentiable primitives the network is composed from.

Feature maps are laid out channels-first along a signal axis: `[c, s]` for a
single example or `[b, c, s]` for a batch. Every op accepts either form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from dwenet.errors import ShapeError
from dwenet.tensor import Array, Tensor, default_dtype, record_op

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

ActivationKind = Literal["relu", "leaky_relu"]
PoolKind = Literal["avg_k2", "global_max", "global_avg"]


def _batched(x: Array) -> Array:
    """View a `[c, s]` map as a batch of one."""
    if x.ndim == 2:
        return x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected a [c, s] or [b, c, s] feature map, got shape {x.shape}")
    return x


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return record_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return record_op("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return record_op(
        "sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,),
        lambda g: (np.broadcast_to(g, shape).astype(x.dtype),),
    )


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape
    return record_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(tuple(axes)))
    return record_op("permute", out, (x,), lambda g: (g.transpose(inverse),))


def pad(x: Tensor, widths: Sequence[Tuple[int, int]]) -> Tensor:
    """Zero-pad every axis by (before, after)."""
    if len(widths) != x.ndim:
        raise ShapeError(f"pad: {len(widths)} widths for a {x.ndim}-d tensor")
    out = np.pad(x.data, [tuple(w) for w in widths])
    inner = tuple(slice(before, before + n) for (before, _), n in zip(widths, x.shape))
    return record_op("pad", out, (x,), lambda g: (g[inner],))


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Stack feature maps along the channel axis, in input order."""
    if not xs:
        raise ShapeError("concat_channels needs at least one input")
    lead = xs[0].shape[:-2]
    length = xs[0].shape[-1]
    for t in xs:
        if t.ndim != xs[0].ndim or t.shape[:-2] != lead or t.shape[-1] != length:
            raise ShapeError(
                f"concat_channels: {t.shape} does not match signal length {length} / batch {lead}"
            )
    if len(xs) == 1:
        return xs[0]
    out = np.concatenate([t.data for t in xs], axis=-2)
    bounds = np.cumsum([0] + [t.shape[-2] for t in xs])

    def vjp(g: Array) -> List[Array]:
        return [g[..., bounds[i]:bounds[i + 1], :] for i in range(len(xs))]

    return record_op("concat_channels", out, tuple(xs), vjp)


def conv_seq(
    x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None, pad: int = 0
) -> Tensor:
    """
    Stride-1 cross-correlation along the signal axis with zero padding.

    Args:
        x: Input map `[c_in, s]` or `[b, c_in, s]`
        kernels: Filters `[c_out, c_in, f]`
        bias: Optional `[c_out]`
        pad: Zeros added on both ends of the signal

    Returns:
        Map `[c_out, s + 2*pad - f + 1]` (batched if the input was)
    """
    if pad < 0:
        raise ValueError(f"pad must be non-negative, got {pad}")
    x3 = _batched(x.data)
    c_out, c_in, width = kernels.shape
    batch, channels, length = x3.shape
    if channels != c_in:
        raise ShapeError(f"conv_seq: input has {channels} channels, kernel expects {c_in}")
    if width > length + 2 * pad:
        raise ShapeError(f"conv_seq: kernel width {width} exceeds padded signal {length + 2 * pad}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv_seq: bias shape {bias.shape}, expected ({c_out},)")

    xp = np.pad(x3, ((0, 0), (0, 0), (pad, pad))) if pad else x3
    out_len = length + 2 * pad - width + 1
    windows = sliding_window_view(xp, width, axis=2)  # [b, c_in, out_len, f]
    out = np.tensordot(windows, kernels.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out = out + bias.data[None, :, None]
    squeeze = x.ndim == 2

    def vjp(g: Array) -> List[Optional[Array]]:
        g3 = g[None] if squeeze else g
        g_kernels = np.tensordot(g3, windows, axes=([0, 2], [0, 2]))
        g_xp = np.zeros_like(xp)
        for j in range(width):
            g_xp[:, :, j:j + out_len] += np.matmul(kernels.data[:, :, j].T, g3)
        g_x = g_xp[:, :, pad:pad + length].reshape(x.shape)
        grads: List[Optional[Array]] = [g_x, g_kernels]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return grads

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return record_op("conv_seq", out[0] if squeeze else out, inputs, vjp)


@dataclass
class BatchNormState:
    """Per-channel running statistics of a batch-norm layer."""

    running_mean: Array
    running_var: Array
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def initial(cls, channels: int, dtype: npt.DTypeLike | None = None) -> "BatchNormState":
        dt = dtype or default_dtype()
        return cls(np.zeros(channels, dtype=dt), np.ones(channels, dtype=dt))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
) -> Tensor:
    """
    Per-channel normalization over (batch, signal).

    Train mode uses batch statistics and updates the running statistics with
    the unbiased variance; eval mode uses the running statistics.
    """
    x3 = _batched(x.data)
    batch, channels, length = x3.shape
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"batchnorm: {channels} channels but gamma {gamma.shape}, beta {beta.shape}"
        )
    axes = (0, 2)
    count = batch * length
    if training:
        if count <= 1:
            raise ShapeError("batchnorm in train mode needs more than one value per channel")
        mean = x3.mean(axis=axes)
        var = x3.var(axis=axes)
        m = state.momentum
        dtype = state.running_mean.dtype
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(dtype)
        unbiased = var * count / (count - 1)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(dtype)
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x3 - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]
    out = out.astype(np.result_type(x.dtype, gamma.dtype), copy=False)
    squeeze = x.ndim == 2

    def vjp(g: Array) -> Tuple[Array, Array, Array]:
        g3 = g[None] if squeeze else g
        g_gamma = (g3 * xhat).sum(axis=axes)
        g_beta = g3.sum(axis=axes)
        g_xhat = g3 * gamma.data[None, :, None]
        if training:
            g_x = (inv_std[None, :, None] / count) * (
                count * g_xhat
                - g_xhat.sum(axis=axes, keepdims=True)
                - xhat * (g_xhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            g_x = g_xhat * inv_std[None, :, None]
        return g_x.reshape(x.shape), g_gamma, g_beta

    return record_op("batchnorm", out[0] if squeeze else out, (x, gamma, beta), vjp)


def activation(x: Tensor, kind: ActivationKind = "relu", slope: float = LEAKY_SLOPE) -> Tensor:
    """ReLU or leaky ReLU; the subgradient at exactly 0 is the negative side."""
    positive = x.data > 0
    if kind == "relu":
        out = np.where(positive, x.data, 0).astype(x.dtype)
        return record_op("relu", out, (x,), lambda g: (g * positive,))
    if kind == "leaky_relu":
        out = np.where(positive, x.data, slope * x.data).astype(x.dtype)
        scale = np.where(positive, 1.0, slope).astype(x.dtype)
        return record_op("leaky_relu", out, (x,), lambda g: (g * scale,))
    raise ValueError(f"unknown activation: {kind}")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return activation(x, "leaky_relu", slope)


def pool(x: Tensor, kind: PoolKind) -> Tensor:
    """
    Pool along the signal axis.

    `avg_k2` averages non-overlapping pairs (a trailing odd element is
    dropped); the global kinds reduce the signal axis to length 1.
    """
    length = x.shape[-1]
    if length == 0:
        raise ShapeError("pool over an empty signal")
    if kind == "avg_k2":
        half = length // 2
        if half == 0:
            raise ShapeError("avg_k2 needs a signal of length >= 2")
        pairs = x.data[..., : 2 * half].reshape(*x.shape[:-1], half, 2)
        out = pairs.mean(axis=-1)

        def vjp_avg(g: Array) -> Tuple[Array]:
            gx = np.zeros_like(x.data)
            gx[..., : 2 * half] = np.repeat(g / 2, 2, axis=-1)
            return (gx,)

        return record_op("avg_k2", out, (x,), vjp_avg)
    if kind == "global_max":
        idx = np.argmax(x.data, axis=-1)[..., None]
        out = np.take_along_axis(x.data, idx, axis=-1)

        def vjp_max(g: Array) -> Tuple[Array]:
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, g, axis=-1)
            return (gx,)

        return record_op("global_max", out, (x,), vjp_max)
    if kind == "global_avg":
        out = x.data.mean(axis=-1, keepdims=True)
        shape = x.shape
        return record_op(
            "global_avg", out, (x,),
            lambda g: (np.broadcast_to(g / length, shape).astype(x.dtype),),
        )
    raise ValueError(f"unknown pool kind: {kind}")


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = W x + b for `[n_in]` or batched `[b, n_in]` inputs."""
    n_out, n_in = weight.shape
    if x.shape[-1] != n_in or x.ndim not in (1, 2):
        raise ShapeError(f"affine: input {x.shape} does not match weight {weight.shape}")
    if bias.shape != (n_out,):
        raise ShapeError(f"affine: bias {bias.shape}, expected ({n_out},)")
    out = x.data @ weight.data.T + bias.data

    def vjp(g: Array) -> Tuple[Array, Array, Array]:
        if x.ndim == 1:
            return g @ weight.data, np.outer(g, x.data), g
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return record_op("affine", out, (x, weight, bias), vjp)


def dropout(
    x: Tensor, rate: float, training: bool, rng: np.random.Generator
) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(x.dtype)
    return record_op("dropout", x.data * scale, (x,), lambda g: (g * scale,))


def embedding_lookup(token_ids: npt.ArrayLike, weight: Tensor, pad_id: int = 0) -> Tensor:
    """
    Gather embedding rows.

    A 1-d id sequence of length s yields `[1, s, d]`; a `[b, s]` batch yields
    `[b, s, d]`. Gradient for the PAD row is discarded.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be [s] or [b, s], got shape {ids.shape}")
    vocab_size = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"token id out of range for vocabulary of size {vocab_size}")
    out = weight.data[ids]

    def vjp(g: Array) -> Tuple[Array]:
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        gw[pad_id] = 0
        return (gw,)

    return record_op("embedding_lookup", out, (weight,), vjp)


def softmax(logits: npt.ArrayLike) -> Array:
    """Row-wise softmax with max subtraction (no gradient)."""
    z = np.asarray(logits)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    probs: Array = e / e.sum(axis=-1, keepdims=True)
    return probs


def softmax_cross_entropy(logits: Tensor, labels: npt.ArrayLike) -> Tuple[Tensor, Array]:
    """
    Mean negative log-likelihood of the true class, fused with softmax.

    Returns:
        Tuple of (scalar loss tensor, probabilities `[b, classes]`)
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [batch, classes], got {logits.shape}")
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch, classes = logits.shape
    if y.shape[0] != batch:
        raise ShapeError(f"{y.shape[0]} labels for a batch of {batch}")
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(batch)
    loss = np.asarray(-log_probs[rows, y].mean(), dtype=logits.dtype)

    def vjp(g: Array) -> Tuple[Array]:
        grad = probs.copy()
        grad[rows, y] -= 1.0
        return ((grad / batch) * g,)

    return record_op("softmax_cross_entropy", loss, (logits,), vjp), probs

