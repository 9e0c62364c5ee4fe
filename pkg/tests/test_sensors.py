"""Event volumes, LiDAR projection, padding and cropping."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltadepth.sensors import (
    CameraModel,
    EventError,
    EventWindow,
    build_event_volume,
    denormalize_depth,
    make_events,
    normalize_depth,
    pad_to_patch_multiple,
    project_lidar,
    random_crop,
    unpad,
)


def brute_force_volume(events, t_start, dt, H, W, bins=4):
    """Per-event loop accumulation, written independently of the vectorised kernel."""
    vol = np.zeros((H, W, bins))
    for e in events:
        ts = (int(e["t"]) - t_start) / dt * (bins - 1)
        for b in range(bins):
            w = max(0.0, 1.0 - abs(ts - b))
            vol[int(e["y"]), int(e["x"]), b] += int(e["p"]) * w
    return vol


def random_window(rng, n, H, W, t_start=1000, dt=50_000):
    t = np.sort(rng.integers(t_start, t_start + dt, size=n))
    return EventWindow(
        make_events(t, rng.integers(0, W, n), rng.integers(0, H, n), rng.choice([-1, 1], n)),
        t_start,
        t_start + dt,
    )


class TestEventVolume:
    def test_empty_window(self):
        vol = build_event_volume(EventWindow(make_events([], [], [], []), 0, 50_000), 6, 7)
        assert vol.shape == (6, 7, 4)
        assert not vol.any()

    def test_single_mid_window_event(self):
        w = EventWindow(make_events([25_000], [3], [5], [1]), 0, 50_000)
        vol = build_event_volume(w, 8, 8)
        np.testing.assert_array_equal(vol[5, 3], [0.0, 0.5, 0.5, 0.0])
        assert vol.sum() == 1.0

    def test_event_at_window_start_goes_to_first_bin(self):
        w = EventWindow(make_events([100], [0], [0], [-1]), 100, 200)
        np.testing.assert_array_equal(build_event_volume(w, 1, 1)[0, 0], [-1, 0, 0, 0])

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        H, W = 12, 9
        win = random_window(rng, 1000, H, W)
        vol = build_event_volume(win, H, W)
        ref = brute_force_volume(win.events, win.t_start, win.duration, H, W)
        assert np.abs(vol - ref).max() < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(0, 300))
    def test_mass_conservation(self, seed, n):
        rng = np.random.default_rng(seed)
        win = random_window(rng, n, 5, 5)
        vol = build_event_volume(win, 5, 5)
        assert abs(vol.sum() - win.events["p"].astype(int).sum()) < 1e-4

    def test_event_at_window_end_rejected(self):
        w = EventWindow(make_events([0, 50_000], [0, 1], [0, 1], [1, 1]), 0, 50_000)
        with pytest.raises(EventError) as info:
            build_event_volume(w, 4, 4)
        assert info.value.index == 1

    def test_out_of_bounds_pixel_rejected(self):
        w = EventWindow(make_events([0, 1, 2], [0, 4, 0], [0, 0, 0], [1, 1, 1]), 0, 10)
        with pytest.raises(EventError) as info:
            build_event_volume(w, 4, 4)
        assert info.value.index == 1

    def test_unsorted_rejected(self):
        w = EventWindow(make_events([5, 3], [0, 0], [0, 0], [1, 1]), 0, 10)
        with pytest.raises(EventError):
            build_event_volume(w, 2, 2)

    def test_bad_polarity_rejected(self):
        w = EventWindow(make_events([1], [0], [0], [0]), 0, 10)
        with pytest.raises(EventError):
            build_event_volume(w, 2, 2)


class TestLidarProjection:
    cam = CameraModel(fx=100.0, fy=100.0, cx=31.6, cy=20.2)

    def test_empty_cloud(self):
        img = project_lidar(np.zeros((0, 3)), self.cam, 40, 64, 200.0)
        assert img.shape == (40, 64, 1) and not img.any()

    def test_optical_axis_point(self):
        img = project_lidar([[0.0, 0.0, 10.0]], self.cam, 40, 64, 200.0)
        assert img[round(20.2), round(31.6), 0] == np.float32(0.05)
        assert np.count_nonzero(img) == 1

    def test_nearest_depth_wins(self):
        pts = [[0.3, 0.0, 30.0], [0.1, 0.0, 10.0]]
        img = project_lidar(pts, self.cam, 40, 64, 50.0)
        assert np.count_nonzero(img) == 1
        assert img.max() == np.float32(10.0 / 50.0)

    def test_discards_behind_far_and_outside(self):
        pts = [[0, 0, -5.0], [0, 0, 0.0], [0, 0, 60.0], [100.0, 0, 10.0], [0, 0, 50.0]]
        img = project_lidar(pts, self.cam, 40, 64, 50.0)
        assert np.count_nonzero(img) == 1 and img.max() == 1.0

    def test_extrinsics_applied(self):
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        cam = CameraModel(50.0, 50.0, 10.0, 10.0, rotation=rot, translation=np.array([0.0, 0.0, 2.0]))
        img = project_lidar([[0.4, 0.0, 8.0]], cam, 21, 21, 20.0)
        # camera point = (0, 0.4, 10) -> u = 10, v = 50 * 0.04 + 10 = 12
        assert img[12, 10, 0] == np.float32(0.5)

    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(ValueError):
            CameraModel(1.0, 1.0, 0.0, 0.0, rotation=np.diag([1.0, 2.0, 1.0]))

    @pytest.mark.parametrize("seed", range(10))
    def test_permutation_invariant_and_in_range(self, seed):
        rng = np.random.default_rng(seed)
        pts = np.column_stack([rng.uniform(-5, 5, 300), rng.uniform(-3, 3, 300), rng.uniform(-2, 70, 300)])
        pts[::7] = pts[1::7][: len(pts[::7])]  # exact duplicates
        a = project_lidar(pts, self.cam, 40, 64, 60.0)
        b = project_lidar(pts[rng.permutation(len(pts))], self.cam, 40, 64, 60.0)
        assert a.tobytes() == b.tobytes()
        assert a.min() >= 0 and a.max() <= 1

    def test_backproject_inverts_projection(self):
        cam = CameraModel(48.0, 48.0, 32.0, 32.0)
        u, v = np.array([3, 40, 63]), np.array([10, 32, 60])
        z = np.array([4.0, 17.5, 49.0])
        img = project_lidar(cam.backproject(u, v, z), cam, 64, 64, 50.0)
        np.testing.assert_allclose(img[v, u, 0], z / 50.0, atol=1e-7)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(1.0, 500.0))
    def test_normalisation_round_trip(self, d, max_range):
        assert abs(normalize_depth(denormalize_depth(d, max_range), max_range) - d) < 1e-7


class TestPadAndCrop:
    @pytest.mark.parametrize(
        "size,P,expected",
        [((64, 64), 16, (64, 64)), ((346, 260), 12, (348, 264)), ((720, 1280), 16, (720, 1280))],
    )
    def test_pad_sizes(self, size, P, expected):
        raster = np.ones(size + (2,), dtype=np.float32)
        padded, orig = pad_to_patch_multiple(raster, P)
        assert padded.shape[:2] == expected and orig == size
        assert padded[size[0] :].sum() == 0 and padded[:, size[1] :].sum() == 0
        np.testing.assert_array_equal(unpad(padded, orig), raster)

    def test_pad_batched(self):
        padded, orig = pad_to_patch_multiple(np.ones((2, 5, 7, 1)), 4)
        assert padded.shape == (2, 8, 8, 1) and orig == (5, 7)

    def test_full_crop_unchanged(self):
        rng = np.random.default_rng(0)
        ev, li, gt = rng.random((32, 48, 4)), rng.random((32, 48, 1)), rng.random((32, 48, 1))
        out = random_crop(ev, li, gt, (32, 48), rng, P=16)
        for a, b in zip(out, (ev, li, gt)):
            np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("src,size,P", [((720, 1280), (512, 512), 16), ((260, 346), (252, 252), 12)])
    def test_crop_shapes_and_alignment(self, src, size, P):
        rng = np.random.default_rng(3)
        ev = np.arange(src[0] * src[1], dtype=np.float32).reshape(src + (1,))
        ev4 = np.repeat(ev, 4, axis=2)
        ce, cl, cg = random_crop(ev4, ev, ev, size, rng, P)
        assert ce.shape == size + (4,) and cl.shape == size + (1,) and cg.shape == size + (1,)
        y0, x0 = divmod(int(cl[0, 0, 0]), src[1])
        assert y0 % P == 0 and x0 % P == 0
        np.testing.assert_array_equal(ce[..., 0], cl[..., 0])
        np.testing.assert_array_equal(cg, cl)

    def test_crop_reproducible(self):
        ev = np.random.default_rng(1).random((100, 100, 4))
        a = random_crop(ev, None, ev[..., :1], (40, 40), np.random.default_rng(9), 4)
        b = random_crop(ev, None, ev[..., :1], (40, 40), np.random.default_rng(9), 4)
        assert a[1] is None and a[0].tobytes() == b[0].tobytes()

    def test_crop_too_large(self):
        with pytest.raises(ValueError):
            random_crop(np.zeros((8, 8, 4)), None, None, (9, 8), np.random.default_rng(0))
