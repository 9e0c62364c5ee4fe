"""Little-endian binary containers for events, LiDAR frames, depth rasters and PGM renderings."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .sensors import EVENT_DTYPE

EVENT_MAGIC = b"DEVT"
EVENT_VERSION = 1
LIDAR_MAGIC = b"DLID"
DEPTH_MAGIC = b"DF32"


class FormatError(ValueError):
    pass


def _read(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    return path.read_bytes()


def write_events(path, events: np.ndarray) -> None:
    events = np.asarray(events, dtype=EVENT_DTYPE)
    Path(path).write_bytes(EVENT_MAGIC + struct.pack("<II", EVENT_VERSION, len(events)) + events.tobytes())


def read_events(path) -> np.ndarray:
    buf = _read(path)
    if buf[:4] != EVENT_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != EVENT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(buf) != 12 + count * EVENT_DTYPE.itemsize:
        raise FormatError(f"{path}: truncated event records")
    return np.frombuffer(buf, dtype=EVENT_DTYPE, count=count, offset=12).copy()


def write_lidar(path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(np.asarray(points).reshape(-1, 3), dtype="<f4")
    Path(path).write_bytes(LIDAR_MAGIC + struct.pack("<I", len(pts)) + pts.tobytes())


def read_lidar(path) -> np.ndarray:
    buf = _read(path)
    if buf[:4] != LIDAR_MAGIC:
        raise FormatError(f"{path}: bad magic")
    (count,) = struct.unpack_from("<I", buf, 4)
    if len(buf) != 8 + 12 * count:
        raise FormatError(f"{path}: truncated point list")
    return np.frombuffer(buf, dtype="<f4", count=3 * count, offset=8).reshape(count, 3).astype(np.float32)


def write_depth(path, depth: np.ndarray) -> None:
    d = np.asarray(depth)
    d = d.reshape(d.shape[0], d.shape[1])
    H, W = d.shape
    Path(path).write_bytes(DEPTH_MAGIC + struct.pack("<II", H, W) + np.ascontiguousarray(d, dtype="<f4").tobytes())


def read_depth(path) -> np.ndarray:
    """Returns an (H, W, 1) float32 raster."""
    buf = _read(path)
    if buf[:4] != DEPTH_MAGIC:
        raise FormatError(f"{path}: bad magic")
    H, W = struct.unpack_from("<II", buf, 4)
    if len(buf) != 12 + 4 * H * W:
        raise FormatError(f"{path}: truncated raster")
    return np.frombuffer(buf, dtype="<f4", count=H * W, offset=12).reshape(H, W, 1).astype(np.float32)


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    img = img.reshape(img.shape[0], img.shape[1])
    H, W = img.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = _read(path)
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise FormatError(f"{path}: not a binary PGM")
    W, H = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=H * W).reshape(H, W).copy()


def depth_to_gray(depth_n: np.ndarray) -> np.ndarray:
    """Normalised depth to 8-bit gray: near is white, far is black."""
    d = np.clip(np.asarray(depth_n, dtype=np.float64).reshape(depth_n.shape[0], depth_n.shape[1]), 0.0, 1.0)
    return np.rint(255.0 * (1.0 - d)).astype(np.uint8)


def error_to_gray(pred_n: np.ndarray, gt_n: np.ndarray) -> np.ndarray:
    """Absolute normalised error to 8-bit gray (0 = exact, 255 = full range off)."""
    e = np.clip(np.abs(np.asarray(pred_n, np.float64) - np.asarray(gt_n, np.float64)), 0.0, 1.0)
    return np.rint(255.0 * e.reshape(e.shape[0], e.shape[1])).astype(np.uint8)
