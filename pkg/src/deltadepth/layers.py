"""Small parameterised layers registered in a :class:`ParamStore`."""

from __future__ import annotations

import math

from .autodiff import ParamStore, Tensor, conv2d, layer_norm


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, std: float | None = None):
        self.weight = store.normal(f"{name}.weight", (d_in, d_out), std if std is not None else 1.0 / math.sqrt(d_in))
        self.bias = store.zeros(f"{name}.bias", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.gamma = store.ones(f"{name}.gamma", (dim,))
        self.beta = store.zeros(f"{name}.beta", (dim,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.eps) * self.gamma + self.beta


class Conv2d:
    """Channels-last convolution with bias and 'same'-style padding for odd kernels."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, kernel: int = 3, stride: int = 1):
        fan_in = kernel * kernel * c_in
        self.weight = store.normal(f"{name}.weight", (kernel, kernel, c_in, c_out), math.sqrt(2.0 / fan_in))
        self.bias = store.zeros(f"{name}.bias", (c_out,))
        self.stride = stride
        self.padding = kernel // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.stride, self.padding) + self.bias
