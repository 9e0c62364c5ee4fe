"""Raster <-> patch-token conversion: convolutional encoding heads, a fixed 2-D
sinusoidal positional embedding, convex upsampling and the guided decoding head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, ShapeError, Tensor, concat, gelu, pad, reshape, sigmoid, softmax, stack, transpose
from .layers import Conv2d, Linear


def prime_factors(n: int) -> list[int]:
    out, d = [], 2
    while d * d <= n:
        while n % d == 0:
            out.append(d)
            n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


def encoder_strides(P: int) -> list[int]:
    """Per-stage strides whose product is ``P`` (largest factor first: 12 -> 3, 2, 2)."""
    if P < 1:
        raise ValueError("patch size must be >= 1")
    return sorted(prime_factors(P), reverse=True) if P > 1 else []


def decoder_factors(P: int) -> list[int]:
    """Upsampling factors, coarse to fine, whose product is ``P``.

    The fine-stage factor is a prefix product of the encoder strides so every
    decoder stage starts at a resolution the encoder also produced
    (16 -> [4, 4], 12 -> [4, 3]).
    """
    strides = encoder_strides(P)
    prefixes = [int(np.prod(strides[:i])) for i in range(1, len(strides))]
    if not prefixes:
        return [P] if P > 1 else []
    fine = min(prefixes, key=lambda p: (abs(p - np.sqrt(P)), p))
    return [P // fine, fine]


@dataclass
class TokenSet:
    tokens: Tensor  # (B, N, D)
    grid: tuple[int, int]

    @property
    def n(self) -> int:
        return self.grid[0] * self.grid[1]


def make_positional_embedding(Hp: int, Wp: int, D: int) -> np.ndarray:
    """Fixed (Hp*Wp, D) embedding: first half encodes the row, second half the column.

    Within each half, consecutive (sin, cos) pairs run over geometric
    frequencies 1 / 10000**(2i / (D/2)).
    """
    if D % 4:
        raise ValueError(f"embedding width {D} must be divisible by 4")
    half = D // 2
    freqs = 1.0 / 10000.0 ** (2.0 * np.arange(half // 2) / half)

    def encode(pos: np.ndarray) -> np.ndarray:
        ang = pos[:, None] * freqs[None, :]
        out = np.empty((len(pos), half))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    rows, cols = np.meshgrid(np.arange(Hp, dtype=np.float64), np.arange(Wp, dtype=np.float64), indexing="ij")
    return np.concatenate([encode(rows.ravel()), encode(cols.ravel())], axis=1)


class EncoderHead:
    """Stacked strided convolutions mapping (B, H, W, C) to a (Hp, Wp, D) grid."""

    def __init__(self, store: ParamStore, name: str, c_in: int, D: int, P: int):
        self.P = P
        self.strides = encoder_strides(P)
        n = len(self.strides)
        self.channels = [max(D >> (n - 1 - i), 1) for i in range(n)]
        self.channels[-1] = D
        self.convs = []
        c = c_in
        for i, (s, c_out) in enumerate(zip(self.strides, self.channels)):
            k = s if s % 2 else s + 1
            self.convs.append(Conv2d(store, f"{name}.conv{i}", c, c_out, kernel=k, stride=s))
            c = c_out

    def __call__(self, raster: Tensor) -> tuple[TokenSet, list[Tensor]]:
        return encode_patches(raster, self)


def encode_patches(raster: Tensor, head: EncoderHead) -> tuple[TokenSet, list[Tensor]]:
    """Tokens (B, N, D) plus every stage's feature map (finest first)."""
    B, H, W, _ = raster.shape
    if H % head.P or W % head.P:
        raise ShapeError("encode_patches", f"H, W multiples of {head.P}", (H, W))
    feats = []
    x = raster
    for i, conv in enumerate(head.convs):
        x = conv(x)
        if i < len(head.convs) - 1:
            x = gelu(x)
        feats.append(x)
    Hp, Wp = H // head.P, W // head.P
    return TokenSet(reshape(x, (B, Hp * Wp, x.shape[-1])), (Hp, Wp)), feats


class LinearPatchHead:
    """Plain patch flattening followed by one linear map (no convolutions)."""

    def __init__(self, store: ParamStore, name: str, c_in: int, D: int, P: int):
        self.P = P
        self.proj = Linear(store, f"{name}.proj", P * P * c_in, D)

    def __call__(self, raster: Tensor) -> tuple[TokenSet, list[Tensor]]:
        B, H, W, C = raster.shape
        P = self.P
        if H % P or W % P:
            raise ShapeError("patchify", f"H, W multiples of {P}", (H, W))
        Hp, Wp = H // P, W // P
        x = reshape(raster, (B, Hp, P, Wp, P, C))
        x = transpose(x, (0, 1, 3, 2, 4, 5))
        x = reshape(x, (B, Hp * Wp, P * P * C))
        return TokenSet(self.proj(x), (Hp, Wp)), []


def convex_upsample(coarse: Tensor, mask_logits: Tensor, factor: int) -> Tensor:
    """Each fine pixel is a softmax-weighted mix of its 3x3 coarse neighbourhood.

    ``coarse`` is (B, h, w, C); ``mask_logits`` is (B, h, w, 9*f*f) laid out as
    [neighbour, sub-row, sub-col]. Borders replicate.
    """
    if factor < 2:
        raise ValueError("upsampling factor must be >= 2")
    B, h, w, C = coarse.shape
    if mask_logits.shape != (B, h, w, 9 * factor * factor):
        raise ShapeError("convex_upsample", (B, h, w, 9 * factor * factor), mask_logits.shape)
    padded = pad(coarse, [(0, 0), (1, 1), (1, 1), (0, 0)], mode="edge")
    neighbours = stack([padded[:, dy : dy + h, dx : dx + w, :] for dy in range(3) for dx in range(3)], axis=3)
    weights = softmax(reshape(mask_logits, (B, h, w, 9, factor * factor)), axis=3)
    fine = transpose(weights, (0, 1, 2, 4, 3)) @ neighbours  # (B, h, w, f*f, C)
    fine = reshape(fine, (B, h, w, factor, factor, C))
    fine = transpose(fine, (0, 1, 3, 2, 4, 5))
    return reshape(fine, (B, h * factor, w * factor, C))


class DecoderHead:
    """Guided convex-upsampling stages followed by a 1-channel sigmoid projection."""

    def __init__(self, store: ParamStore, name: str, D: int, P: int, guide_channels: dict[int, int]):
        """``guide_channels`` maps a downsampling ratio (relative to the input
        raster) to the channel count of the guidance map available there."""
        self.P = P
        self.factors = decoder_factors(P)
        self.stages = []
        c = D
        ratio = P
        for i, f in enumerate(self.factors):
            if ratio not in guide_channels:
                raise ValueError(f"no guidance feature map at 1/{ratio} resolution")
            g = guide_channels[ratio]
            c_next = max(D // 4 ** (i + 1), 8)
            hidden = max(D // 2 ** (i + 1), 16)
            self.stages.append(
                (
                    ratio,
                    f,
                    Conv2d(store, f"{name}.mask{i}.conv0", c + g, hidden, kernel=3),
                    Conv2d(store, f"{name}.mask{i}.conv1", hidden, 9 * f * f, kernel=1),
                    Linear(store, f"{name}.proj{i}", c, c_next),
                )
            )
            c = c_next
            ratio //= f
        self.out = Linear(store, f"{name}.out", c, 1)

    def __call__(self, tokens: TokenSet, guidance: dict[int, Tensor]) -> Tensor:
        return decode_depth(tokens, guidance, self)


def decode_depth(tokens: TokenSet, guidance: dict[int, Tensor], head: DecoderHead) -> Tensor:
    """(B, N, D) tokens to a (B, H, W, 1) map in [0, 1].

    ``guidance`` maps a downsampling ratio to the event-head feature map at that
    resolution; each stage consumes the one matching its input resolution.
    """
    B, _, D = tokens.tokens.shape
    Hp, Wp = tokens.grid
    x = reshape(tokens.tokens, (B, Hp, Wp, D))
    for i, (ratio, f, mconv0, mconv1, proj) in enumerate(head.stages):
        g = guidance.get(ratio)
        if g is None:
            raise KeyError(f"missing guidance feature map at 1/{ratio} resolution")
        if g.shape[1:3] != x.shape[1:3]:
            raise ShapeError("decode_depth.guidance", x.shape[1:3], g.shape[1:3])
        logits = mconv1(gelu(mconv0(concat([x, g], axis=-1))))
        x = convex_upsample(proj(x), logits, f)
        if i < len(head.stages) - 1:
            x = gelu(x)
    return sigmoid(head.out(x))


def guidance_from_features(feats: list[Tensor], strides: list[int]) -> dict[int, Tensor]:
    """Index encoder stage outputs by their cumulative downsampling ratio."""
    out, r = {}, 1
    for s, f in zip(strides, feats):
        r *= s
        out[r] = f
    return out


class RegroupHead:
    """Token regrouping into pixels plus a small convolutional smoothing head."""

    def __init__(self, store: ParamStore, name: str, D: int, P: int, channels: int = 4):
        self.P = P
        self.channels = channels
        self.expand = Linear(store, f"{name}.expand", D, P * P * channels)
        self.conv0 = Conv2d(store, f"{name}.conv0", channels, channels, kernel=3)
        self.conv1 = Conv2d(store, f"{name}.conv1", channels, 1, kernel=3)

    def __call__(self, tokens: TokenSet, guidance=None) -> Tensor:
        B = tokens.tokens.shape[0]
        Hp, Wp = tokens.grid
        P, c = self.P, self.channels
        x = reshape(self.expand(tokens.tokens), (B, Hp, Wp, P, P, c))
        x = reshape(transpose(x, (0, 1, 3, 2, 4, 5)), (B, Hp * P, Wp * P, c))
        return sigmoid(self.conv1(gelu(self.conv0(x))))
