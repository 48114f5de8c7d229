"""Adam with bias correction, operating directly on parameter nodes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GraphError
from .tensor import TensorNode


@dataclass
class AdamState:
    """First/second moment buffers, one pair per parameter, plus the step count."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    @classmethod
    def for_params(cls, params: list[TensorNode]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.values) for p in params],
            v=[np.zeros_like(p.values) for p in params],
        )


def adam_step(
    params: list[TensorNode],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One update from the accumulated adjoints; adjoints are cleared after.

    A parameter whose adjoint was never touched counts as zero gradient and,
    with zero moments, stays exactly where it is.
    """
    if lr <= 0:
        raise GraphError(f"adam_step needs lr > 0, got {lr}")
    if len(params) != len(state.m):
        raise GraphError("adam state does not match the parameter list")
    b1, b2 = betas
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for i, p in enumerate(params):
        g = p.adjoint
        if g is None:
            g = np.zeros_like(p.values)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.adjoint = None
