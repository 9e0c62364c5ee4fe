"""The full event + LiDAR fusion network, its ablation variants, and recurrent forward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionBlock
from .autodiff import ParamStore, Tensor, count_parameters, layer_norm
from .memory import GruCell, PropagationMemory, init_memories, update_central
from .patches import (
    DecoderHead,
    EncoderHead,
    LinearPatchHead,
    RegroupHead,
    TokenSet,
    encoder_strides,
    guidance_from_features,
    make_positional_embedding,
)

VARIANTS = ("FULL", "NPM", "NCM", "NCA", "NL", "NE", "NEH")
EVENT_BINS = 4


@dataclass(frozen=True)
class NetworkConfig:
    H: int = 64
    W: int = 64
    P: int = 8
    D: int = 64
    heads: int = 4
    ffn_mult: int = 2
    prop_size: int = 32
    dt_us: int = 50_000
    max_range: float = 50.0
    variant: str = "FULL"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.D % 4:
            raise ValueError(f"D={self.D} must be divisible by 4")
        if self.D % self.heads:
            raise ValueError(f"D={self.D} must be divisible by heads={self.heads}")
        if self.P < 2:
            raise ValueError("patch size must be >= 2")
        if self.H % self.P or self.W % self.P:
            raise ValueError(f"H, W ({self.H}, {self.W}) must be multiples of P={self.P}; pad first")

    @property
    def grid(self) -> tuple[int, int]:
        return self.H // self.P, self.W // self.P

    @property
    def n_tokens(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def uses_events(self) -> bool:
        return self.variant != "NE"

    @property
    def uses_lidar(self) -> bool:
        return self.variant != "NL"

    @property
    def uses_propagation(self) -> bool:
        return self.variant not in ("NPM", "NL", "NE")

    @property
    def uses_central(self) -> bool:
        return self.variant != "NCM"

    @property
    def sa_depth(self) -> int:
        return 3 if self.variant == "NEH" else 2

    def to_meta(self) -> dict[str, str]:
        return {
            "variant": self.variant,
            "H": str(self.H),
            "W": str(self.W),
            "P": str(self.P),
            "D": str(self.D),
            "heads": str(self.heads),
            "ffn_mult": str(self.ffn_mult),
            "prop_size": str(self.prop_size),
            "dt_us": str(self.dt_us),
            "max_range": repr(float(self.max_range)),
        }

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "NetworkConfig":
        ints = ("H", "W", "P", "D", "heads", "ffn_mult", "prop_size", "dt_us")
        kw = {k: int(meta[k]) for k in ints if k in meta}
        if "max_range" in meta:
            kw["max_range"] = float(meta["max_range"])
        if "variant" in meta:
            kw["variant"] = meta["variant"]
        return cls(**kw)


@dataclass
class WindowInput:
    """One temporal window. Rasters are (H, W, C) or batched (B, H, W, C)."""

    events: np.ndarray
    lidar: np.ndarray | None = None
    gt: np.ndarray | None = None


@dataclass
class NetworkState:
    central: Tensor | None
    prop_mem: Tensor | None
    lidar_tokens: Tensor | None
    lidar_feats: list[Tensor] | None = None
    step: int = 0
    initialized: bool = True

    def detach(self) -> "NetworkState":
        d = lambda t: None if t is None else t.detach()
        feats = None if self.lidar_feats is None else [f.detach() for f in self.lidar_feats]
        return NetworkState(d(self.central), d(self.prop_mem), d(self.lidar_tokens), feats, self.step, self.initialized)


class DeltaNetwork:
    """Parameters and wiring for one variant.

    Parameter names are grouped as ``enc_event.*``, ``enc_lidar.*``, ``sa_*``,
    ``ca_f.*``, ``ca_p1.*``, ``ca_p2.*``, ``prop_init``, ``gru*``, ``skip*`` and
    ``dec.*`` so checkpoints are readable and variants are inspectable.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=None):
        self.config = config
        c = config
        self.params = ParamStore(np.random.default_rng(seed), dtype=dtype)
        store = self.params
        self.pos_emb = make_positional_embedding(*c.grid, c.D)
        head_cls = LinearPatchHead if c.variant == "NEH" else EncoderHead
        block = lambda name, cross=False: AttentionBlock(store, name, c.D, c.heads, c.ffn_mult, cross=cross)

        self.enc_event = head_cls(store, "enc_event", EVENT_BINS, c.D, c.P) if c.uses_events else None
        self.enc_lidar = head_cls(store, "enc_lidar", 1, c.D, c.P) if c.uses_lidar else None
        self.prop = PropagationMemory(store, c.D, c.heads, c.ffn_mult, c.prop_size) if c.uses_propagation else None
        depth = c.sa_depth
        self.sa_event = [block(f"sa_event{k + 1}") for k in range(depth)] if c.uses_events else []
        self.sa_lidar = [block(f"sa_lidar{k + 1}") for k in range(depth)] if c.uses_lidar else []
        fuse = c.uses_events and c.uses_lidar and c.variant != "NCA"
        self.ca_f = block("ca_f", cross=True) if fuse else None
        if c.variant == "NCA":
            self.grus = [GruCell(store, "gru_lidar", c.D), GruCell(store, "gru_event", c.D)]
        elif c.uses_central:
            self.grus = [GruCell(store, "gru", c.D)]
        else:
            self.grus = []
        self.skip_norms = [(store.ones(f"skip{k + 1}.gamma", (c.D,)), store.zeros(f"skip{k + 1}.beta", (c.D,))) for k in range(depth)]
        self.sa_dec = [block(f"sa_dec{k + 1}") for k in range(depth)]
        if c.variant == "NEH":
            self.decoder = RegroupHead(store, "dec", c.D, c.P)
        else:
            guide_head = self.enc_event if c.uses_events else self.enc_lidar
            guide = {}
            r = 1
            for s, ch in zip(guide_head.strides, guide_head.channels):
                r *= s
                guide[r] = ch
            self.decoder = DecoderHead(store, "dec", c.D, c.P, guide)

    # -- state ------------------------------------------------------------
    def init_state(self, batch: int = 1) -> NetworkState:
        central, prop = init_memories(self.pos_emb, self.prop.init if self.prop else None, batch, self.params.dtype)
        if not self.config.uses_central:
            central = None
        return NetworkState(central=central, prop_mem=prop, lidar_tokens=None, step=0)

    def _pos(self) -> Tensor:
        return Tensor(self.pos_emb, dtype=self.params.dtype)

    def _encode(self, head, raster: np.ndarray):
        tokens, feats = head(Tensor(raster, dtype=self.params.dtype))
        return tokens.tokens + self._pos(), feats, head

    # -- forward ------------------------------------------------------------
    def forward_step(self, state: NetworkState, inp: WindowInput) -> tuple[Tensor, NetworkState]:
        """One window: returns the (B, H, W, 1) normalised depth and the next state."""
        if state is None or not state.initialized:
            raise RuntimeError("network state is not initialised; call init_state() first")
        c = self.config
        events = _batched(inp.events)
        B, H, W, _ = events.shape
        if (H, W) != (c.H, c.W):
            raise ValueError(f"input size {(H, W)} does not match network size {(c.H, c.W)}")
        lidar = None if inp.lidar is None else _batched(inp.lidar)
        if lidar is not None and lidar.shape[:3] != (B, H, W):
            raise ValueError(f"LiDAR raster {lidar.shape} does not match events {events.shape}")

        E0 = L0 = None
        guidance = {}
        if c.uses_events:
            E0, feats, _ = self._encode(self.enc_event, events)
            guidance = guidance_from_features(feats, encoder_strides(c.P)) if feats else {}

        new_prop = state.prop_mem
        Lp = None
        lfeats = None
        if c.uses_lidar:
            if lidar is not None:
                L0, lfeats, _ = self._encode(self.enc_lidar, lidar)
            elif state.lidar_tokens is not None:
                L0, lfeats = state.lidar_tokens, state.lidar_feats
            else:
                L0, lfeats, _ = self._encode(self.enc_lidar, np.zeros((B, H, W, 1), dtype=np.float32))
            if not c.uses_events and lfeats:
                guidance = guidance_from_features(lfeats, encoder_strides(c.P))
            if self.prop is not None:
                new_prop, Lp = self.prop(state.prop_mem, E0, L0)
            else:
                Lp = L0

        E = [E0]
        for blk in self.sa_event:
            E.append(blk(E[-1]))
        L = [Lp]
        for blk in self.sa_lidar:
            L.append(blk(L[-1]))

        central = state.central
        if c.variant == "NCA":
            central = update_central(self.grus[0], L[-1], central)
            central = update_central(self.grus[1], E[-1], central)
            dec_in = central
        else:
            if self.ca_f is not None:
                fused = self.ca_f(E[-1], L[-1])
            else:
                fused = E[-1] if c.uses_events else L[-1]
            if c.uses_central:
                central = update_central(self.grus[0], fused, central)
                dec_in = central
            else:
                dec_in = fused

        depth = c.sa_depth
        d = dec_in
        for k in range(depth, 0, -1):
            if c.uses_events and c.uses_lidar:
                s = E[k] + L[k]
            else:
                s = E[k] if c.uses_events else L[k]
            gamma, beta = self.skip_norms[k - 1]
            d = self.sa_dec[depth - k](d) + (layer_norm(s) * gamma + beta)

        out = self.decoder(TokenSet(d, c.grid), guidance)
        new_state = NetworkState(
            central=central if c.uses_central else None,
            prop_mem=new_prop,
            lidar_tokens=Lp,
            lidar_feats=lfeats,
            step=state.step + 1,
        )
        return out, new_state

    def forward_sequence(self, inputs: list[WindowInput], state: NetworkState | None = None) -> tuple[list[Tensor], NetworkState]:
        if not inputs:
            raise ValueError("empty input sequence")
        if state is None:
            state = self.init_state(_batched(inputs[0].events).shape[0])
        outs = []
        for inp in inputs:
            out, state = self.forward_step(state, inp)
            outs.append(out)
        return outs, state

    def count_parameters(self) -> int:
        return count_parameters(self.params)


def _batched(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return x[None] if x.ndim == 3 else x


def build_variant(config: NetworkConfig, seed: int = 0, dtype=None) -> DeltaNetwork:
    return DeltaNetwork(config, seed=seed, dtype=dtype)


def forward_step(net: DeltaNetwork, state: NetworkState, inp: WindowInput):
    return net.forward_step(state, inp)


def forward_sequence(net: DeltaNetwork, inputs: list[WindowInput]) -> list[Tensor]:
    return net.forward_sequence(inputs)[0]


def full_scale_config(H: int = 64, W: int = 64, variant: str = "FULL") -> NetworkConfig:
    """Full-width settings (D=1024, P=16, 8 heads, FFN x4, 128-row propagation memory)."""
    return NetworkConfig(H=H, W=W, P=16, D=1024, heads=8, ffn_mult=4, prop_size=128, max_range=200.0, variant=variant)
