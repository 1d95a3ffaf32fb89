"""He initialization, Adam with decoupled weight decay, and the one-cycle schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from dwenet.errors import ShapeError
from dwenet.tensor import Array, Tensor, default_dtype

logger = logging.getLogger(__name__)

ADAM_BETA2 = 0.99
ADAM_EPS = 1e-8


def he_init(
    shape: Sequence[int],
    fan_in: int,
    rng: np.random.Generator,
    dtype: npt.DTypeLike | None = None,
) -> Tensor:
    """Zero-mean normal weights with std sqrt(2 / fan_in)."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    std = math.sqrt(2.0 / fan_in)
    values = rng.normal(0.0, std, size=tuple(shape))
    return Tensor(values, requires_grad=True, dtype=dtype or default_dtype())


@dataclass(frozen=True)
class OneCycleSpec:
    """
    Shape of a one-cycle learning-rate / momentum schedule.

    The learning rate rises from lr_max/div to lr_max over the first pct_up of
    the steps, then falls to lr_max/(div*final_div). Momentum moves the other
    way between mom_high and mom_low. Both phases are cosine-annealed.
    """

    total_steps: int
    lr_max: float = 1e-3
    pct_up: float = 0.3
    div: float = 25.0
    final_div: float = 1e4
    mom_high: float = 0.8
    mom_low: float = 0.7

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be positive, got {self.total_steps}")
        if self.lr_max <= 0:
            raise ValueError(f"lr_max must be positive, got {self.lr_max}")
        if not 0.0 <= self.pct_up <= 1.0:
            raise ValueError(f"pct_up must lie in [0, 1], got {self.pct_up}")
        if self.div <= 0 or self.final_div <= 0:
            raise ValueError("div and final_div must be positive")
        if self.mom_low > self.mom_high:
            raise ValueError("mom_low must not exceed mom_high")

    @property
    def lr_start(self) -> float:
        return self.lr_max / self.div

    @property
    def lr_end(self) -> float:
        return self.lr_max / (self.div * self.final_div)

    @property
    def peak_step(self) -> int:
        """The warm-up length, rounded to a whole step."""
        return round(self.pct_up * self.total_steps)


def _cos_anneal(start: float, end: float, pct: float) -> float:
    return end + (start - end) / 2.0 * (1.0 + math.cos(math.pi * pct))


def one_cycle(step: float, spec: OneCycleSpec) -> Tuple[float, float]:
    """
    Learning rate and momentum at a schedule position.

    Args:
        step: Position in [0, total_steps]
        spec: Schedule shape

    Returns:
        Tuple of (lr, momentum)
    """
    if not 0 <= step <= spec.total_steps:
        raise ValueError(f"step {step} outside [0, {spec.total_steps}]")
    peak = spec.peak_step
    if step <= peak and peak > 0:
        pct = step / peak
        return (
            _cos_anneal(spec.lr_start, spec.lr_max, pct),
            _cos_anneal(spec.mom_high, spec.mom_low, pct),
        )
    pct = (step - peak) / (spec.total_steps - peak)
    return (
        _cos_anneal(spec.lr_max, spec.lr_end, pct),
        _cos_anneal(spec.mom_low, spec.mom_high, pct),
    )


@dataclass
class AdamState:
    """First/second moment buffers per parameter name and the step counter."""

    m: Dict[str, Array] = field(default_factory=dict)
    v: Dict[str, Array] = field(default_factory=dict)
    t: int = 0

    def state_dict(self) -> Dict[str, object]:
        return {
            "t": self.t,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    @classmethod
    def from_state_dict(cls, state: Mapping[str, object]) -> "AdamState":
        m = state["m"]
        v = state["v"]
        assert isinstance(m, Mapping) and isinstance(v, Mapping)
        t = state["t"]
        assert isinstance(t, int)
        return cls(
            m={k: np.array(a) for k, a in m.items()},
            v={k: np.array(a) for k, a in v.items()},
            t=t,
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[Array]],
    state: AdamState,
    lr: float,
    beta1: float,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
    weight_decay: float = 0.0,
    decoupled: bool = True,
    masks: Optional[Mapping[str, Array]] = None,
) -> None:
    """
    One bias-corrected Adam update, in place on `params`.

    Weight decay is decoupled (p <- p * (1 - lr*wd)) unless `decoupled` is
    False, in which case it is added to the gradient as an L2 term. Entries
    where `masks[name]` is False are never modified.
    """
    state.t += 1
    t = state.t
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, param in params.items():
        p = param.data
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"{name}: grad shape {g.shape} vs param shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        if m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"{name}: optimizer state shape {m.shape} vs param shape {p.shape}")
        if weight_decay and not decoupled:
            g = g + weight_decay * p
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        step = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        decay = 1.0 - lr * weight_decay if decoupled else 1.0
        updated = (p * decay - step).astype(p.dtype, copy=False)
        if masks is not None and name in masks:
            updated = np.where(masks[name], updated, p)
        param.data = updated


class Adam:
    """Adam optimizer over a fixed set of named parameters."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        weight_decay: float = 0.0,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
        decoupled: bool = True,
        masks: Optional[Mapping[str, Array]] = None,
    ) -> None:
        self.params = dict(params)
        self.weight_decay = weight_decay
        self.beta2 = beta2
        self.eps = eps
        self.decoupled = decoupled
        self.masks = dict(masks or {})
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float, beta1: float) -> None:
        adam_step(
            self.params,
            {name: p.grad for name, p in self.params.items()},
            self.state,
            lr=lr,
            beta1=beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            decoupled=self.decoupled,
            masks=self.masks,
        )
