"""Central finite-difference gradient checking (run under float64)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn().item()
        flat[i] = orig - h
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between analytic and numerical gradients of ``fn``.

    ``fn`` must rebuild the graph from ``inputs`` on every call. Errors are
    normalised per input by the largest gradient magnitude.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise TypeError("gradcheck requires float64 inputs")
        t.requires_grad = True
    loss = fn()
    grads = backward(loss)
    worst = 0.0
    for t in inputs:
        analytic = grads.get(t, np.zeros_like(t.data))
        worst = max(worst, relative_error(analytic, numerical_grad(fn, t, h)))
    return worst
