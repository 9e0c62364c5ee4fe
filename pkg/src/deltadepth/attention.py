"""Pre-norm multi-head self- and cross-attention transformer blocks."""

from __future__ import annotations

import math

from .autodiff import ParamStore, Tensor, gelu, reshape, softmax, transpose
from .layers import LayerNorm, Linear


def attention_weights(q: Tensor, k: Tensor, heads: int) -> Tensor:
    """Softmax attention matrix (B, heads, Nq, Nk) for already-projected q, k."""
    qh, kh = _split_heads(q, heads), _split_heads(k, heads)
    scale = 1.0 / math.sqrt(q.shape[-1] // heads)
    return softmax((qh @ transpose(kh, (0, 1, 3, 2))) * scale, axis=-1)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Raw scaled dot-product attention on projected (B, N, D) inputs."""
    B, Nq, D = q.shape
    w = attention_weights(q, k, heads)
    out = w @ _split_heads(v, heads)  # (B, h, Nq, dh)
    return reshape(transpose(out, (0, 2, 1, 3)), (B, Nq, D))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, N, D = x.shape
    return transpose(reshape(x, (B, N, heads, D // heads)), (0, 2, 1, 3))


class AttentionBlock:
    """norm -> attention -> residual, then norm -> feed-forward -> residual.

    Used as self-attention (``kv`` omitted) or cross-attention. Cross blocks
    normalise queries and keys/values with separate layer norms.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, ffn_mult: int = 2, cross: bool = False):
        if dim % heads:
            raise ValueError(f"{name}: width {dim} not divisible by {heads} heads")
        self.name = name
        self.dim = dim
        self.heads = heads
        self.cross = cross
        self.norm_q = LayerNorm(store, f"{name}.norm_q", dim)
        self.norm_kv = LayerNorm(store, f"{name}.norm_kv", dim) if cross else None
        self.wq = Linear(store, f"{name}.wq", dim, dim)
        self.wk = Linear(store, f"{name}.wk", dim, dim)
        self.wv = Linear(store, f"{name}.wv", dim, dim)
        self.wo = Linear(store, f"{name}.wo", dim, dim, std=0.5 / math.sqrt(dim))
        self.norm_ff = LayerNorm(store, f"{name}.norm_ff", dim)
        self.ff1 = Linear(store, f"{name}.ff1", dim, ffn_mult * dim)
        self.ff2 = Linear(store, f"{name}.ff2", ffn_mult * dim, dim, std=0.5 / math.sqrt(ffn_mult * dim))

    def __call__(self, x: Tensor, kv: Tensor | None = None) -> Tensor:
        q_in = self.norm_q(x)
        if kv is None:
            kv_in = q_in
        else:
            kv_in = self.norm_kv(kv) if self.norm_kv is not None else self.norm_q(kv)
        h = x + self.wo(attention(self.wq(q_in), self.wk(kv_in), self.wv(kv_in), self.heads))
        return h + self.ff2(gelu(self.ff1(self.norm_ff(h))))


def self_attend(block: AttentionBlock, tokens: Tensor) -> Tensor:
    return block(tokens)


def cross_attend(block: AttentionBlock, queries: Tensor, keys_values: Tensor) -> Tensor:
    return block(queries, keys_values)
