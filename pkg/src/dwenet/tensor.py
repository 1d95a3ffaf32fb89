"""Dense tensor with reverse-mode automatic differentiation.

A `Tensor` wraps a NumPy array. Every differentiable primitive in `dwenet.ops`
produces its output through `record_op`, which attaches a `TapeEntry` holding
the inputs and the vector-Jacobian product. `backward` orders the entries
reachable from a scalar loss into a `GradTape` and replays it in reverse.
"""

from __future__ import annotations

import logging
import os
import threading
import weakref
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from dwenet.errors import GradientError

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.floating[Any]]
VJP = Callable[[Array], Sequence[Optional[Array]]]


class _State(threading.local):
    def __init__(self) -> None:
        self.dtype: np.dtype[Any] = np.dtype(np.float32)
        self.grad_enabled = True
        self.tapes: List["GradTape"] = []


_state = _State()
_debug = os.environ.get("DWENET_DEBUG", "") not in ("", "0")


def default_dtype() -> np.dtype[Any]:
    """Floating dtype used for newly constructed tensors on this thread."""
    return _state.dtype


@contextmanager
def precision(dtype: npt.DTypeLike) -> Iterator[None]:
    """Temporarily change the default floating dtype (float32 or float64)."""
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision: {resolved}")
    previous = _state.dtype
    _state.dtype = resolved
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def float64_mode() -> Iterator[None]:
    """64-bit mode used by gradient checks."""
    with precision(np.float64):
        yield


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable op recording, e.g. for eval-mode inference."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def grad_enabled() -> bool:
    return _state.grad_enabled


def set_debug(enabled: bool) -> None:
    """Toggle finiteness assertions on every op output."""
    global _debug
    _debug = enabled


def debug_enabled() -> bool:
    return _debug


class Tensor:
    """
    Dense numeric array with an optional gradient.

    Attributes:
        data: Row-major values (float32 by default, float64 in 64-bit mode)
        requires_grad: Whether gradients flow to this tensor
        grad: Gradient buffer of identical shape, populated by `backward`
        name: Optional label, used for parameters
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_entry", "__weakref__")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: npt.DTypeLike | None = None,
        name: str | None = None,
    ) -> None:
        self.data: Array = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[Array] = None
        self.name = name
        self._entry: Optional[TapeEntry] = None

    @classmethod
    def _wrap(cls, data: Array, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._entry = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._entry is None

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False)

    def sum(self) -> "Tensor":
        from dwenet import ops

        return ops.sum(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        from dwenet import ops

        return ops.add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from dwenet import ops

        return ops.mul(self, other)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}, "
            f"requires_grad={self.requires_grad}{label})"
        )


@dataclass(eq=False)
class TapeEntry:
    """One executed primitive: its inputs, output and vector-Jacobian product."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: "weakref.ReferenceType[Tensor]"
    vjp: Optional[VJP]

    @property
    def consumed(self) -> bool:
        return self.vjp is None


@dataclass
class GradTape:
    """
    Ordered record of executed primitive ops.

    Entries are kept in execution order. Replaying in reverse populates `grad`
    for every `requires_grad` leaf reachable from the loss. A tape must not be
    shared across concurrent backward calls.
    """

    entries: List[TapeEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @contextmanager
    def record(self) -> Iterator["GradTape"]:
        """Append every op executed inside the block to this tape."""
        _state.tapes.append(self)
        try:
            yield self
        finally:
            _state.tapes.remove(self)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "GradTape":
        """Build the tape of ops reachable from `loss`, in topological order."""
        order: List[TapeEntry] = []
        visited: set[int] = set()
        stack: List[Tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            tensor, finished = stack.pop()
            entry = tensor._entry
            if entry is None:
                continue
            if finished:
                order.append(entry)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            for inp in entry.inputs:
                if inp._entry is not None and id(inp) not in visited:
                    stack.append((inp, False))
        return cls(order)

    def backward(self, loss: Tensor) -> None:
        """Replay the tape in reverse from a scalar loss."""
        if loss.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.entries:
            return
        if any(entry.consumed for entry in self.entries):
            raise GradientError("backward called twice on the same graph")

        grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for entry in reversed(self.entries):
            out = entry.output()
            vjp = entry.vjp
            entry.vjp = None
            if out is None or vjp is None:
                continue
            upstream = grads.pop(id(out), None)
            if upstream is None:
                continue
            input_grads = vjp(upstream)
            for inp, g in zip(entry.inputs, input_grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                if inp._entry is None:
                    leaves[key] = inp

        for key, leaf in leaves.items():
            if leaf.grad is not None:
                raise GradientError(
                    f"stale gradient on {leaf!r}; call zero_grad() before another backward"
                )
            leaf.grad = np.asarray(grads[key], dtype=leaf.data.dtype).reshape(leaf.data.shape)


def backward(loss: Tensor) -> None:
    """Populate `grad` on every requires_grad leaf reachable from `loss`."""
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._entry is None:
        if loss.requires_grad:
            if loss.grad is not None:
                raise GradientError("backward called twice on the same leaf")
            loss.grad = np.ones_like(loss.data)
        return
    if loss._entry.consumed:
        raise GradientError("backward called twice on the same graph")
    GradTape.from_loss(loss).backward(loss)


def record_op(op: str, data: Array, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    """Wrap an op result and, when any input needs gradients, record it."""
    if _debug and not np.all(np.isfinite(data)):
        finite_inputs = all(np.all(np.isfinite(t.data)) for t in inputs)
        if finite_inputs:
            raise FloatingPointError(f"{op} produced non-finite values from finite inputs")
    requires = _state.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=requires)
    if requires:
        entry = TapeEntry(op, tuple(inputs), weakref.ref(out), vjp)
        out._entry = entry
        for tape in _state.tapes:
            tape.entries.append(entry)
    return out
