"""Named parameter storage and the binary checkpoint format."""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .tensor import Tensor, get_default_dtype

CHECKPOINT_MAGIC = b"DLTW"
CHECKPOINT_VERSION = 1
META_PREFIX = "meta:"


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered name -> trainable tensor map shared by all network blocks."""

    def __init__(self, rng: np.random.Generator | None = None, dtype=None):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = dtype or get_default_dtype()
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def names(self) -> list[str]:
        return list(self._params)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name, dtype=self.dtype)
        self._params[name] = t
        return t

    def normal(self, name: str, shape, std: float) -> Tensor:
        return self.add(name, self.rng.standard_normal(shape) * std)

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, v.data) for k, v in self._params.items())

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = [k for k in self._params if k not in state]
        extra = [k for k in state if k not in self._params]
        if strict and (missing or extra):
            raise CheckpointError(f"parameter mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, arr in state.items():
            if name not in self._params:
                continue
            p = self._params[name]
            if p.shape != tuple(arr.shape):
                raise CheckpointError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.data.dtype)


def count_parameters(params) -> int:
    """Total number of scalars across a parameter set (store, dict, or iterable)."""
    if isinstance(params, (ParamStore, dict)):
        values = params.values() if isinstance(params, dict) else params.tensors()
    else:
        values = params
    total = 0
    for v in values:
        total += int(np.prod(v.shape))
    return total


def save_checkpoint(path, state: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    """Write parameters (and optional string metadata) in the DLTW layout.

    Metadata travels as zero-valued rank-1 entries whose name is
    ``meta:<key>=<value>`` so the byte layout stays a plain parameter list.
    """
    entries: list[tuple[str, np.ndarray]] = []
    for key, value in (meta or {}).items():
        entries.append((f"{META_PREFIX}{key}={value}", np.zeros(1, dtype=np.float32)))
    entries.extend(state.items())
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode("ascii")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[OrderedDict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    buf = path.read_bytes()
    try:
        return _parse_checkpoint(buf, path)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None


def _parse_checkpoint(buf: bytes, path) -> tuple[OrderedDict[str, np.ndarray], dict[str, str]]:
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a DLTW checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    state: OrderedDict[str, np.ndarray] = OrderedDict()
    meta: dict[str, str] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("ascii")
        off += nlen
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
        if name.startswith(META_PREFIX):
            key, _, value = name[len(META_PREFIX) :].partition("=")
            meta[key] = value
        else:
            state[name] = arr
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return state, meta
