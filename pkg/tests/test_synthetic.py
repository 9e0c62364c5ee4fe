"""Synthetic scenes: event synthesis oracle, LiDAR/GT consistency, rate contract, baseline fill."""

import math
from collections import Counter

import numpy as np
import pytest

from deltadepth.sensors import normalize_depth, project_lidar
from deltadepth.synthetic import (
    SceneConfig,
    baseline_interpolate,
    generate_sequence,
    lidar_pixels,
    make_boards,
    read_sequence,
    render,
    synthesize_events,
    write_sequence,
)


def brute_force_events(log_frames, theta):
    """Per-pixel loop: count threshold crossings from the last event level, frame to frame."""
    n, H, W = log_frames.shape
    out = Counter()
    for y in range(H):
        for x in range(W):
            ref = log_frames[0, y, x]
            for k in range(1, n):
                cur = log_frames[k, y, x]
                while abs(cur - ref) >= theta:
                    s = 1 if cur > ref else -1
                    ref += s * theta
                    out[(k, x, y, s)] += 1
    return out


def interval(t, step=1000):
    """Frame interval k (frames k-1 -> k) holding a timestamp; a crossing may land on its end."""
    return max(1, math.ceil(int(t) / step))


def moving_square(n=6, H=12, W=16, size=4, dark=0.1, light=0.8):
    frames = np.full((n, H, W), math.log(light))
    for k in range(n):
        frames[k, 4 : 4 + size, 2 + k : 2 + k + size] = math.log(dark)
    return frames


def small_cfg(**kw):
    base = dict(seed=3, H=32, W=32, windows=6, objects=3, subframes=4)
    base.update(kw)
    return SceneConfig(**base)


class TestEventSynthesis:
    def test_static_scene_has_no_events(self):
        frames = np.repeat(np.random.default_rng(0).random((1, 8, 8)), 5, axis=0)
        ev, _ = synthesize_events(frames, np.arange(5) * 100, 0.2)
        assert len(ev) == 0

    def test_static_camera_sequence_is_silent(self):
        sample = generate_sequence(small_cfg(speed=(0.0, 0.0)))
        assert all(len(w.events) == 0 for w in sample.windows)

    def test_moving_square_matches_oracle(self):
        frames = moving_square()
        times = np.arange(len(frames)) * 1000
        ev, _ = synthesize_events(frames, times, 0.2)
        got = Counter((interval(e["t"]), int(e["x"]), int(e["y"]), int(e["p"])) for e in ev)
        assert got == brute_force_events(frames, 0.2)

    def test_moving_square_events_on_edges_only(self):
        frames = moving_square()
        ev, _ = synthesize_events(frames, np.arange(len(frames)) * 1000, 0.2)
        for e in ev:
            k = interval(e["t"])
            x, p = int(e["x"]), int(e["p"])
            # leading edge darkens (negative), trailing edge brightens (positive)
            assert (x, p) in ((2 + k + 3, -1), (2 + k - 1, 1))
            assert 4 <= int(e["y"]) < 8

    def test_events_sorted_with_interpolated_times(self):
        frames = np.array([0.0, 0.5, 1.1])[:, None, None] * np.ones((3, 2, 2))
        ev, _ = synthesize_events(frames, np.array([0, 1000, 2000]), 0.2)
        assert np.all(np.diff(ev["t"].astype(np.int64)) >= 0)
        # levels 0.2 and 0.4 in the first interval, 0.6, 0.8 and 1.0 in the second
        assert sorted(set(ev["t"].tolist())) == [400, 800, 1166, 1500, 1833]
        assert len(ev) == 20 and (ev["p"] == 1).all()

    def test_events_only_where_intensity_changed(self):
        cfg = small_cfg()
        sample = generate_sequence(cfg)
        # re-simulate the scene from the same seed
        rng = np.random.default_rng(cfg.seed)
        speed = float(rng.uniform(*cfg.speed))
        direction = 1.0 if rng.random() < 0.5 else -1.0
        cam_x = lambda t: direction * speed * t * 1e-6
        ends = (cam_x(0.0), cam_x(cfg.windows * cfg.dt_us))
        boards = make_boards(cfg, rng, (min(ends), max(ends)))
        times = np.rint(np.linspace(0, cfg.windows * cfg.dt_us, cfg.windows * cfg.subframes + 1))
        logs = np.stack([render(cfg, boards, cam_x(t))[1] for t in times])
        changed = np.any(np.abs(np.diff(logs, axis=0)) > 0, axis=0)
        for w in sample.windows:
            assert changed[w.events["y"].astype(int), w.events["x"].astype(int)].all()


class TestSequence:
    def test_deterministic(self):
        a, b = generate_sequence(small_cfg()), generate_sequence(small_cfg())
        for wa, wb in zip(a.windows, b.windows):
            assert wa.events.tobytes() == wb.events.tobytes()
        for ga, gb in zip(a.gt, b.gt):
            assert ga.tobytes() == gb.tobytes()

    @pytest.mark.parametrize("T,k", [(6, 1), (6, 2), (7, 2), (8, 3)])
    def test_lidar_rate_contract(self, T, k):
        s = generate_sequence(small_cfg(windows=T, lidar_period=k))
        present = [t for t, p in enumerate(s.lidar) if p is not None]
        assert present == [t for t in range(T) if t % k == 0]
        assert len(present) == math.ceil(T / k) and len(s.gt) == T

    def test_lidar_reprojects_onto_gt(self):
        cfg = small_cfg()
        s = generate_sequence(cfg)
        v, u = lidar_pixels(cfg)
        for pts, gt in zip(s.lidar, s.gt):
            img = project_lidar(pts, s.camera, cfg.H, cfg.W, cfg.max_range)
            assert np.abs(img[v, u, 0] - gt[v, u, 0]).max() < 1e-5
            assert np.count_nonzero(img) == len(v)

    def test_depth_range(self):
        cfg = small_cfg()
        for gt in generate_sequence(cfg).gt:
            assert gt.min() >= normalize_depth(2.0, cfg.max_range) - 1e-7 and gt.max() <= 1.0

    @pytest.mark.parametrize(
        "kw", [dict(lidar_period=0), dict(theta=0.0), dict(windows=0), dict(max_range=3.0), dict(lidar_band=(0.8, 0.2))]
    )
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            generate_sequence(small_cfg(**kw))

    def test_directory_round_trip(self, tmp_path):
        s = generate_sequence(small_cfg(lidar_period=2))
        write_sequence(tmp_path / "seq", s)
        names = sorted(p.name for p in (tmp_path / "seq").iterdir())
        assert [n for n in names if n.startswith("lidar_")] == ["lidar_0.dlid", "lidar_2.dlid", "lidar_4.dlid"]
        back = read_sequence(tmp_path / "seq")
        a, b = s.window_inputs(), back.window_inputs()
        for x, y in zip(a, b):
            assert x.events.tobytes() == y.events.tobytes() and x.gt.tobytes() == y.gt.tobytes()
            assert (x.lidar is None) == (y.lidar is None)
            if x.lidar is not None:
                assert x.lidar.tobytes() == y.lidar.tobytes()


def nn_oracle(img):
    H, W = img.shape
    pts = [(y, x) for y in range(H) for x in range(W) if img[y, x] > 0]
    out = np.zeros_like(img)
    for y in range(H):
        for x in range(W):
            best = min(pts, key=lambda p: ((p[0] - y) ** 2 + (p[1] - x) ** 2, p))
            out[y, x] = img[best]
    return out


class TestBaseline:
    def test_dense_identity(self):
        img = np.random.default_rng(0).uniform(0.1, 1, (5, 6, 1))
        np.testing.assert_array_equal(baseline_interpolate(img), img)

    def test_single_pixel(self):
        img = np.zeros((4, 5))
        img[2, 3] = 0.4
        np.testing.assert_array_equal(baseline_interpolate(img), np.full((4, 5), 0.4))

    def test_two_pixels_nearer_wins(self):
        img = np.zeros((5, 9))
        img[1, 1], img[3, 7] = 0.2, 0.9
        np.testing.assert_array_equal(baseline_interpolate(img), nn_oracle(img))

    @pytest.mark.parametrize("seed", range(5))
    def test_random_sparse_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        img = np.where(rng.random((10, 12)) < 0.08, rng.uniform(0.1, 1, (10, 12)), 0.0)
        img[0, 0] = 0.5
        np.testing.assert_array_equal(baseline_interpolate(img), nn_oracle(img))

    def test_many_ties_resolved_row_major(self):
        img = np.zeros((9, 9))
        img[::2, ::2] = np.arange(25).reshape(5, 5) + 1.0
        np.testing.assert_array_equal(baseline_interpolate(img), nn_oracle(img))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            baseline_interpolate(np.zeros((3, 3, 1)))
