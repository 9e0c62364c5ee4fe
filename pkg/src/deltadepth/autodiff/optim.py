"""Adam with bias correction and a multiplicative per-epoch learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
    """One in-place Adam update over ``params``; missing gradients count as zero."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"adam[{name}]", p.shape, g.shape)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if m.shape != p.shape:
            raise ShapeError(f"adam[{name}].moments", p.shape, m.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.data.dtype, copy=False)


def decay_lr(state: AdamState, factor: float) -> AdamState:
    if not factor > 0 or factor > 1:
        raise ValueError(f"decay factor must lie in (0, 1], got {factor}")
    state.lr *= factor
    return state


def epoch_decay_factor(epochs: int, total_drop: float = 0.01) -> float:
    """Per-epoch factor reaching ``total_drop`` of the initial rate at the last epoch."""
    if epochs <= 1:
        return 1.0
    return total_drop ** (1.0 / (epochs - 1))
