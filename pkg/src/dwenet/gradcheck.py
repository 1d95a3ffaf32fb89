"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from dwenet import ops
from dwenet.tensor import Array, Tensor, backward, no_grad

DEFAULT_STEP = 1e-5


@dataclass
class GradCheckReport:
    """Outcome of a gradient check."""

    errors: List[float] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max(self.errors, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def _relative_error(analytic: Array, numeric: Array, floor: float = 1e-8) -> float:
    diff = float(np.max(np.abs(analytic - numeric), initial=0.0))
    scale = max(
        float(np.max(np.abs(analytic), initial=0.0)),
        float(np.max(np.abs(numeric), initial=0.0)),
    )
    if scale < floor:
        return diff
    return diff / scale


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tol: float = 1e-4,
    step: float = DEFAULT_STEP,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare backward() against central differences.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. Errors are measured per input as the largest
    absolute deviation divided by the largest gradient magnitude.

    Args:
        f: Function of the input tensors returning a tensor
        inputs: float64 tensors to differentiate with respect to
        tol: Pass threshold on the max relative error
        step: Finite-difference step
        max_entries: Check at most this many entries per input (sampled)
        seed: Seed for the projection and the entry sampling

    Returns:
        GradCheckReport with one error per input
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("grad_check requires 64-bit inputs; build them under float64_mode()")

    rng = np.random.default_rng(seed)
    saved_flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()

    out = f(*inputs)
    projection = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
    loss = ops.sum(ops.mul(out, projection))
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def objective() -> float:
        with no_grad():
            value = f(*inputs)
            return float(np.sum(value.data * projection.data))

    report = GradCheckReport(tol=tol)
    for t, grad in zip(inputs, analytic):
        flat_size = t.size
        if max_entries is not None and flat_size > max_entries:
            indices = rng.choice(flat_size, size=max_entries, replace=False)
        else:
            indices = np.arange(flat_size)
        numeric = np.zeros(len(indices))
        original = t.data
        for n, index in enumerate(indices):
            plus = original.copy()
            plus.reshape(-1)[index] += step
            t.data = plus
            f_plus = objective()
            minus = original.copy()
            minus.reshape(-1)[index] -= step
            t.data = minus
            f_minus = objective()
            numeric[n] = (f_plus - f_minus) / (2 * step)
        t.data = original
        report.errors.append(_relative_error(grad.reshape(-1)[indices], numeric))

    for t, flag in zip(inputs, saved_flags):
        t.requires_grad = flag
        t.zero_grad()
    return report
