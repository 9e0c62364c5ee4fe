"""Recurrent state: the LiDAR propagation memory and the GRU-updated central memory."""

from __future__ import annotations

import math

import numpy as np

from .attention import AttentionBlock
from .autodiff import ParamStore, ShapeError, Tensor, concat, sigmoid, tanh


class GruCell:
    """Token-wise GRU; one cell shared by every token position."""

    def __init__(self, store: ParamStore, name: str, dim: int):
        std = 1.0 / math.sqrt(2 * dim)
        self.dim = dim
        self.wz = store.normal(f"{name}.wz", (2 * dim, dim), std)
        self.bz = store.zeros(f"{name}.bz", (dim,))
        self.wr = store.normal(f"{name}.wr", (2 * dim, dim), std)
        self.br = store.zeros(f"{name}.br", (dim,))
        self.wh = store.normal(f"{name}.wh", (2 * dim, dim), std)
        self.bh = store.zeros(f"{name}.bh", (dim,))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return update_central(self, x, h)


def update_central(gru: GruCell, fused: Tensor, mem: Tensor) -> Tensor:
    if fused.shape != mem.shape:
        raise ShapeError("update_central", mem.shape, fused.shape)
    xh = concat([fused, mem], axis=-1)
    z = sigmoid(xh @ gru.wz + gru.bz)
    r = sigmoid(xh @ gru.wr + gru.br)
    cand = tanh(concat([fused, r * mem], axis=-1) @ gru.wh + gru.bh)
    return (1.0 - z) * mem + z * cand


def init_memories(pos_emb: np.ndarray, prop_init: Tensor | None, batch: int = 1, dtype=None) -> tuple[Tensor, Tensor | None]:
    """Central memory = copy of the positional embedding; propagation memory = learned initial state.

    Both are given a leading batch axis. The propagation memory stays connected
    to its parameter so the initial state receives gradients.
    """
    if dtype is None and prop_init is not None:
        dtype = prop_init.data.dtype
    central = Tensor(np.broadcast_to(pos_emb, (batch,) + pos_emb.shape).copy(), dtype=dtype)
    if prop_init is None:
        return central, None
    prop = prop_init.reshape(1, *prop_init.shape)
    if batch > 1:
        prop = concat([prop] * batch, axis=0)
    return central, prop


class PropagationMemory:
    """CA_P1 writes events into the memory; CA_P2 lets LiDAR tokens read from it."""

    def __init__(self, store: ParamStore, dim: int, heads: int, ffn_mult: int, size: int = 128):
        self.size = size
        self.init = store.normal("prop_init", (size, dim), 0.02)
        self.ca_p1 = AttentionBlock(store, "ca_p1", dim, heads, ffn_mult, cross=True)
        self.ca_p2 = AttentionBlock(store, "ca_p2", dim, heads, ffn_mult, cross=True)

    def __call__(self, prop_mem: Tensor, event_tokens: Tensor, lidar_tokens: Tensor) -> tuple[Tensor, Tensor]:
        return propagate_lidar(self, prop_mem, event_tokens, lidar_tokens)


def propagate_lidar(pm: PropagationMemory, prop_mem: Tensor, event_tokens: Tensor, lidar_tokens: Tensor):
    if event_tokens.shape != lidar_tokens.shape:
        raise ShapeError("propagate_lidar", event_tokens.shape, lidar_tokens.shape)
    if prop_mem.shape[-1] != event_tokens.shape[-1] or prop_mem.shape[-2] != pm.size:
        raise ShapeError("propagate_lidar.memory", (pm.size, event_tokens.shape[-1]), prop_mem.shape)
    new_mem = pm.ca_p1(prop_mem, event_tokens)
    return new_mem, pm.ca_p2(lidar_tokens, new_mem)
