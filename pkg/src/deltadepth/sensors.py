"""Event volumes, sparse LiDAR depth images, cropping and padding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


class EventError(ValueError):
    def __init__(self, index: int, reason: str):
        self.index = index
        super().__init__(f"event {index}: {reason}")


def make_events(t, x, y, p) -> np.ndarray:
    ev = np.zeros(len(t), dtype=EVENT_DTYPE)
    ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
    return ev


@dataclass
class EventWindow:
    """Events with timestamps in the half-open interval [t_start, t_end) (microseconds)."""

    events: np.ndarray
    t_start: int
    t_end: int

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    def validate(self, H: int | None = None, W: int | None = None) -> None:
        ev = self.events
        if self.t_end <= self.t_start:
            raise ValueError(f"empty window [{self.t_start}, {self.t_end})")
        if len(ev) == 0:
            return
        t = ev["t"].astype(np.int64)
        bad = np.flatnonzero((t < self.t_start) | (t >= self.t_end))
        if bad.size:
            raise EventError(int(bad[0]), f"timestamp {t[bad[0]]} outside [{self.t_start}, {self.t_end})")
        bad = np.flatnonzero(np.diff(t) < 0)
        if bad.size:
            raise EventError(int(bad[0] + 1), "timestamps not sorted")
        bad = np.flatnonzero((ev["p"] != 1) & (ev["p"] != -1))
        if bad.size:
            raise EventError(int(bad[0]), f"polarity {ev['p'][bad[0]]} not in {{-1, +1}}")
        if H is not None and W is not None:
            bad = np.flatnonzero((ev["x"] >= W) | (ev["y"] >= H))
            if bad.size:
                i = int(bad[0])
                raise EventError(i, f"pixel ({ev['x'][i]}, {ev['y'][i]}) outside {W}x{H}")


def build_event_volume(window: EventWindow, H: int, W: int, bins: int = 4) -> np.ndarray:
    """Signed polarity split bilinearly in time over ``bins`` channels, shape (H, W, bins)."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    window.validate(H, W)
    vol = np.zeros((H, W, bins), dtype=np.float64)
    ev = window.events
    if len(ev):
        tn = (ev["t"].astype(np.float64) - window.t_start) / window.duration * (bins - 1)
        lo = np.floor(tn).astype(np.int64)
        frac = tn - lo
        pol = ev["p"].astype(np.float64)
        x = ev["x"].astype(np.int64)
        y = ev["y"].astype(np.int64)
        np.add.at(vol, (y, x, lo), pol * (1.0 - frac))
        hi = lo + 1
        keep = hi < bins
        np.add.at(vol, (y[keep], x[keep], hi[keep]), (pol * frac)[keep])
    return vol.astype(np.float32)


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-6):
            raise ValueError("extrinsic rotation is not orthonormal")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def from_camera(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation

    def backproject(self, u, v, z) -> np.ndarray:
        """Pixel coordinates plus camera-frame depth to LiDAR-frame points."""
        u, v, z = (np.asarray(a, dtype=np.float64) for a in (u, v, z))
        cam = np.stack([(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z], axis=-1)
        return self.from_camera(cam)


def project_lidar(points, cam: CameraModel, H: int, W: int, max_range: float) -> np.ndarray:
    """Rasterise a point cloud into a normalised sparse depth image (H, W, 1).

    Nearest depth wins per pixel; 0 marks pixels without a return.
    """
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    out = np.zeros((H, W), dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return out[..., None].astype(np.float32)
    cp = cam.to_camera(pts)
    z = cp[:, 2]
    ok = (z > 0) & (z <= max_range)
    pts, cp, z = pts[ok], cp[ok], z[ok]
    u = np.rint(cam.fx * cp[:, 0] / z + cam.cx).astype(np.int64)
    v = np.rint(cam.fy * cp[:, 1] / z + cam.cy).astype(np.int64)
    ok = (u >= 0) & (u < W) & (v >= 0) & (v < H)
    pts, z, u, v = pts[ok], z[ok], u[ok], v[ok]
    # canonical order (depth, x, y, z): first occurrence per pixel is the nearest
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], z))
    flat = v[order] * W + u[order]
    _, first = np.unique(flat, return_index=True)
    sel = order[first]
    out[v[sel], u[sel]] = z[sel] / max_range
    return out[..., None].astype(np.float32)


def pad_to_patch_multiple(raster: np.ndarray, P: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pad bottom/right so both spatial extents are multiples of ``P``.

    ``raster`` is (H, W, C) or (B, H, W, C); returns the padded raster and the
    original (H, W).
    """
    if P < 1:
        raise ValueError("patch size must be >= 1")
    hax = raster.ndim - 3
    H, W = raster.shape[hax], raster.shape[hax + 1]
    ph, pw = (-H) % P, (-W) % P
    widths = [(0, 0)] * raster.ndim
    widths[hax] = (0, ph)
    widths[hax + 1] = (0, pw)
    return np.pad(raster, widths), (H, W)


def unpad(raster: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    hax = raster.ndim - 3
    idx = [slice(None)] * raster.ndim
    idx[hax] = slice(0, size[0])
    idx[hax + 1] = slice(0, size[1])
    return raster[tuple(idx)]


def random_crop(eventvol, lidar, gt, size, rng: np.random.Generator, P: int = 1):
    """Crop three aligned (H, W, C) rasters at one random, patch-aligned origin."""
    ch, cw = size
    H, W = eventvol.shape[:2]
    for r in (lidar, gt):
        if r is not None and r.shape[:2] != (H, W):
            raise ValueError(f"raster size mismatch: {r.shape[:2]} vs {(H, W)}")
    if ch > H or cw > W:
        raise ValueError(f"crop {size} larger than image {(H, W)}")
    y0 = int(rng.integers(0, H - ch + 1))
    x0 = int(rng.integers(0, W - cw + 1))
    y0 -= y0 % P
    x0 -= x0 % P
    crop = lambda r: None if r is None else r[y0 : y0 + ch, x0 : x0 + cw]
    return crop(eventvol), crop(lidar), crop(gt)


def normalize_depth(depth_m, max_range: float):
    return np.asarray(depth_m) / max_range


def denormalize_depth(depth_n, max_range: float):
    return np.asarray(depth_n) * max_range
