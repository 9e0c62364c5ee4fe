"""Deterministic toy driving scenes: events, low-rate LiDAR and dense ground-truth depth.

A pinhole camera translates sideways past textured fronto-parallel boards
standing on a ground plane, in front of a far wall at the maximum range.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import formats
from .network import WindowInput
from .sensors import CameraModel, EventWindow, build_event_volume, make_events, project_lidar

CAMERA_HEIGHT = 1.5  # meters above the ground plane


@dataclass
class SceneConfig:
    seed: int = 7
    H: int = 64
    W: int = 64
    dt_us: int = 50_000
    windows: int = 40
    lidar_period: int = 1
    lidar_rows: int = 8
    lidar_band: tuple[float, float] = (0.375, 0.875)  # first/last scan row as a fraction of H
    lidar_stride: int = 2
    max_range: float = 50.0
    objects: int = 5
    speed: tuple[float, float] = (1.5, 3.0)  # lateral camera speed range, m/s
    theta: float = 0.2
    subframes: int = 10
    phase: float = 0.0  # camera time offset, in windows

    def validate(self) -> None:
        if self.lidar_period < 1:
            raise ValueError("lidar_period must be >= 1")
        if self.theta <= 0:
            raise ValueError("contrast threshold must be positive")
        if self.windows < 1 or self.H < 2 or self.W < 2 or self.dt_us < 1:
            raise ValueError("windows, H, W and dt_us must be positive")
        if self.max_range <= 4.0:
            raise ValueError("max_range must exceed the nearest object distance (4 m)")
        if self.lidar_rows < 1 or self.lidar_stride < 1 or self.subframes < 1:
            raise ValueError("lidar_rows, lidar_stride and subframes must be >= 1")
        lo, hi = self.lidar_band
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("lidar_band must satisfy 0 <= lo <= hi <= 1")
        if self.speed[0] < 0 or self.speed[1] < self.speed[0]:
            raise ValueError("speed range must be non-negative and ordered")

    def camera(self) -> CameraModel:
        f = 0.75 * self.W
        return CameraModel(fx=f, fy=f, cx=self.W / 2.0, cy=self.H / 2.0, translation=np.array([0.0, 0.0, 0.0]))


@dataclass
class Board:
    z: float
    x0: float
    x1: float
    top: float  # world Y of the upper edge (Y grows downward; ground at CAMERA_HEIGHT)
    albedo: float
    freq: tuple[float, float]
    shift: float


@dataclass
class SequenceSample:
    config: SceneConfig
    camera: CameraModel
    windows: list[EventWindow]
    lidar: list[np.ndarray | None]  # LiDAR-frame points (M, 3), on arrival steps only
    gt: list[np.ndarray]  # normalised (H, W, 1), valid at each window end

    def window_inputs(self) -> list[WindowInput]:
        c = self.config
        out = []
        for win, pts, gt in zip(self.windows, self.lidar, self.gt):
            vol = build_event_volume(win, c.H, c.W)
            lid = None if pts is None else project_lidar(pts, self.camera, c.H, c.W, c.max_range)
            out.append(WindowInput(vol, lid, gt))
        return out


# -- scene layout and rendering ----------------------------------------------
def make_boards(cfg: SceneConfig, rng: np.random.Generator, travel: tuple[float, float]) -> list[Board]:
    """Boards spread over the lateral span the camera sees during ``travel`` (min, max cam x)."""
    boards = []
    zs = np.sort(rng.uniform(4.0, 0.7 * cfg.max_range, size=cfg.objects))
    for z in zs:
        half_fov = z * (cfg.W / 2.0) / (0.75 * cfg.W)
        cx = rng.uniform(travel[0] - half_fov, travel[1] + half_fov)
        width = rng.uniform(0.15, 0.45) * 2 * half_fov
        height = rng.uniform(0.3, 1.0) * (CAMERA_HEIGHT + z * 0.5 / 0.75)
        boards.append(
            Board(
                z=float(z),
                x0=float(cx - width / 2),
                x1=float(cx + width / 2),
                top=float(CAMERA_HEIGHT - height),
                albedo=float(rng.uniform(0.25, 0.9)),
                freq=(float(rng.uniform(0.8, 2.5)), float(rng.uniform(0.8, 2.5))),
                shift=float(rng.uniform(0, 2 * np.pi)),
            )
        )
    return boards


def render(cfg: SceneConfig, boards: list[Board], cam_x: float) -> tuple[np.ndarray, np.ndarray]:
    """Depth (meters) and log-intensity images for a camera at lateral position ``cam_x``."""
    cam = cfg.camera()
    v, u = np.mgrid[0 : cfg.H, 0 : cfg.W].astype(np.float64)
    rx = (u - cam.cx) / cam.fx
    ry = (v - cam.cy) / cam.fy
    R = cfg.max_range

    depth = np.full((cfg.H, cfg.W), R)
    wx, wy = cam_x + rx * R, ry * R
    inten = 0.55 * (1.0 + 0.35 * np.sin(0.4 * wx) * np.sin(0.5 * wy + 1.0))

    below = ry > 1e-9
    zg = np.where(below, CAMERA_HEIGHT / np.where(below, ry, 1.0), np.inf)
    hit = below & (zg < R)
    zg = np.where(hit, zg, 0.0)
    gx = cam_x + rx * zg
    ground = 0.45 * (1.0 + 0.4 * np.sin(1.3 * gx) * np.sin(0.9 * zg))
    depth = np.where(hit, zg, depth)
    inten = np.where(hit, ground, inten)

    for b in boards:
        X = cam_x + rx * b.z
        Y = ry * b.z
        hit = (X >= b.x0) & (X <= b.x1) & (Y >= b.top) & (Y <= CAMERA_HEIGHT) & (b.z < depth)
        tex = b.albedo * (1.0 + 0.5 * np.sin(b.freq[0] * 2 * X + b.shift) * np.sin(b.freq[1] * 2 * Y))
        depth = np.where(hit, b.z, depth)
        inten = np.where(hit, tex, inten)
    return depth, np.log(np.maximum(inten, 1e-3))


# -- event synthesis ---------------------------------------------------------
def synthesize_events(log_frames: np.ndarray, times_us: np.ndarray, theta: float, ref: np.ndarray | None = None):
    """Contrast-threshold events from a stack of log-intensity frames.

    A pixel fires each time its log intensity moves by ``theta`` from the level
    of its previous event; timestamps are linearly interpolated between frames.
    Returns (events sorted by time then row-major pixel, final reference levels).
    """
    log_frames = np.asarray(log_frames, dtype=np.float64)
    ref = log_frames[0].copy() if ref is None else ref.copy()
    ts, xs, ys, ps = [], [], [], []
    H, W = ref.shape
    flat_idx = np.arange(H * W)
    for k in range(1, len(log_frames)):
        prev, cur = log_frames[k - 1].ravel(), log_frames[k].ravel()
        r = ref.ravel()
        t0, t1 = float(times_us[k - 1]), float(times_us[k])
        delta = cur - prev
        while True:
            up = cur - r >= theta
            down = r - cur >= theta
            fire = up | down
            if not fire.any():
                break
            sign = np.where(up, 1.0, -1.0)
            level = r + sign * theta
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(delta != 0, (level - prev) / delta, 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            sel = flat_idx[fire]
            ts.append(np.floor(t0 + frac[sel] * (t1 - t0)).astype(np.int64))
            ys.append(sel // W)
            xs.append(sel % W)
            ps.append(sign[sel].astype(np.int8))
            r[sel] = level[sel]
        ref = r.reshape(H, W)
    if ts:
        t, x, y, p = (np.concatenate(a) for a in (ts, xs, ys, ps))
    else:
        t = x = y = p = np.zeros(0, dtype=np.int64)
    order = np.lexsort((x, y, t))
    return make_events(t[order], x[order], y[order], p[order]), ref


def split_windows(events: np.ndarray, dt_us: int, windows: int) -> list[EventWindow]:
    t = events["t"].astype(np.int64)
    out = []
    for k in range(windows):
        lo, hi = k * dt_us, (k + 1) * dt_us
        a, b = np.searchsorted(t, lo, "left"), np.searchsorted(t, hi, "left")
        out.append(EventWindow(events[a:b].copy(), lo, hi))
    return out


# -- LiDAR -------------------------------------------------------------------
def lidar_pixels(cfg: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = cfg.lidar_band
    rows = np.unique(np.rint(np.linspace(lo * (cfg.H - 1), hi * (cfg.H - 1), cfg.lidar_rows)).astype(int))
    cols = np.arange(0, cfg.W, cfg.lidar_stride)
    vv, uu = np.meshgrid(rows, cols, indexing="ij")
    return vv.ravel(), uu.ravel()


def scan_lidar(cfg: SceneConfig, cam: CameraModel, depth_m: np.ndarray) -> np.ndarray:
    v, u = lidar_pixels(cfg)
    return cam.backproject(u, v, depth_m[v, u]).astype(np.float32)


# -- top-level generation ----------------------------------------------------
def generate_sequence(cfg: SceneConfig) -> SequenceSample:
    """Render one sequence; identical configs give bit-identical samples."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    speed = float(rng.uniform(*cfg.speed))
    direction = 1.0 if rng.random() < 0.5 else -1.0
    dt_s = cfg.dt_us * 1e-6
    cam = cfg.camera()

    def cam_x(t_us: float) -> float:
        return direction * speed * (t_us * 1e-6 + cfg.phase * dt_s)

    ends = (cam_x(0.0), cam_x(cfg.windows * cfg.dt_us))
    boards = make_boards(cfg, rng, (min(ends), max(ends)))

    n_sub = cfg.windows * cfg.subframes
    times = np.rint(np.linspace(0, cfg.windows * cfg.dt_us, n_sub + 1)).astype(np.int64)
    logs = np.empty((n_sub + 1, cfg.H, cfg.W))
    depths = {}
    for i, t in enumerate(times):
        d, logs[i] = render(cfg, boards, cam_x(float(t)))
        if i % cfg.subframes == 0 and i > 0:
            depths[i // cfg.subframes - 1] = d
    events, _ = synthesize_events(logs, times, cfg.theta)
    windows = split_windows(events, cfg.dt_us, cfg.windows)

    gts, lidar = [], []
    for k in range(cfg.windows):
        d = depths[k]
        gts.append((d / cfg.max_range)[..., None].astype(np.float32))
        lidar.append(scan_lidar(cfg, cam, d) if k % cfg.lidar_period == 0 else None)
    return SequenceSample(cfg, cam, windows, lidar, gts)


def baseline_interpolate(lidar: np.ndarray) -> np.ndarray:
    """Fill every pixel with its nearest valid LiDAR pixel (ties: row-major first)."""
    img = np.asarray(lidar)
    squeeze = img.ndim == 3
    img2 = img.reshape(img.shape[0], img.shape[1])
    H, W = img2.shape
    vy, vx = np.nonzero(img2 > 0)
    if len(vy) == 0:
        raise ValueError("baseline_interpolate: no valid LiDAR pixels")
    vals = img2[vy, vx]
    src = np.stack([vy, vx], axis=1).astype(np.float64)
    qy, qx = np.mgrid[0:H, 0:W]
    q = np.stack([qy.ravel(), qx.ravel()], axis=1).astype(np.float64)
    k = min(16, len(src))
    dist, idx = cKDTree(src).query(q, k=k)
    dist = dist.reshape(len(q), k)
    idx = idx.reshape(len(q), k)
    # valid pixels are in row-major order, so the smallest index among ties wins
    tied = dist <= dist[:, :1] + 1e-9
    best = np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)
    if k < len(src):
        crowded = np.flatnonzero(tied[:, -1])
        for i in crowded:
            d2 = ((src - q[i]) ** 2).sum(axis=1)
            best[i] = int(np.flatnonzero(d2 <= d2.min() + 1e-9)[0])
    out = vals[best].reshape(H, W)
    return out[..., None] if squeeze else out


# -- dataset directory I/O ---------------------------------------------------
def write_sequence(seq_dir, sample: SequenceSample) -> None:
    seq_dir = Path(seq_dir)
    seq_dir.mkdir(parents=True, exist_ok=True)
    c, cam = sample.config, sample.camera
    meta = {
        "H": c.H,
        "W": c.W,
        "dt_us": c.dt_us,
        "k": c.lidar_period,
        "max_range": repr(float(c.max_range)),
        "T": c.windows,
        "fx": repr(cam.fx),
        "fy": repr(cam.fy),
        "cx": repr(cam.cx),
        "cy": repr(cam.cy),
        "rotation": " ".join(repr(float(x)) for x in cam.rotation.ravel()),
        "translation": " ".join(repr(float(x)) for x in cam.translation),
    }
    (seq_dir / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    for t, (win, pts, gt) in enumerate(zip(sample.windows, sample.lidar, sample.gt)):
        formats.write_events(seq_dir / f"events_{t}.devt", win.events)
        if pts is not None:
            formats.write_lidar(seq_dir / f"lidar_{t}.dlid", pts)
        formats.write_depth(seq_dir / f"gt_{t}.df32", gt)


def read_meta(seq_dir) -> dict[str, str]:
    path = Path(seq_dir) / "meta.txt"
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    return meta


def read_sequence(seq_dir) -> SequenceSample:
    seq_dir = Path(seq_dir)
    meta = read_meta(seq_dir)
    H, W, dt, k, T = (int(meta[key]) for key in ("H", "W", "dt_us", "k", "T"))
    max_range = float(meta["max_range"])
    cfg = SceneConfig(H=H, W=W, dt_us=dt, windows=T, lidar_period=k, max_range=max_range)
    if "fx" in meta:
        cam = CameraModel(
            float(meta["fx"]),
            float(meta["fy"]),
            float(meta["cx"]),
            float(meta["cy"]),
            np.array([float(x) for x in meta["rotation"].split()]).reshape(3, 3),
            np.array([float(x) for x in meta["translation"].split()]),
        )
    else:
        cam = cfg.camera()
    windows, lidar, gts = [], [], []
    for t in range(T):
        ev = formats.read_events(seq_dir / f"events_{t}.devt")
        windows.append(EventWindow(ev, t * dt, (t + 1) * dt))
        lp = seq_dir / f"lidar_{t}.dlid"
        lidar.append(formats.read_lidar(lp) if lp.exists() else None)
        gp = seq_dir / f"gt_{t}.df32"
        gts.append(formats.read_depth(gp) if gp.exists() else None)
    return SequenceSample(cfg, cam, windows, lidar, gts)
