"""Tests for the point encoder, image pyramid, and rasterizer."""

import numpy as np
import pytest

from fusiondet.backbones import (
    ImagePyramidConfig,
    PointEncoderConfig,
    encode_image_pyramid_forward,
    encode_points_forward,
    farthest_point_indices,
    radius_groups,
    rasterize_scene,
    register_image_pyramid,
    register_point_encoder,
)
from fusiondet.errors import InputError
from fusiondet.geometry import CameraModel
from fusiondet.gradcheck import run_module_check
from fusiondet.params import ParamStore


def simple_cam(w=64, h=64, f=50.0):
    K = np.array([[f, 0, w / 2], [0, f, h / 2], [0, 0, 1.0]])
    return CameraModel(K=K, R=np.eye(3), t=np.zeros(3), width=w, height=h)


class TestFps:
    def test_start_is_lexicographic_minimum(self):
        pts = np.array([[1.0, 0, 0], [0.0, 5, 0], [0.0, 2, 7], [3.0, 0, 0]])
        idx = farthest_point_indices(pts, 2)
        assert idx[0] == 2  # x ties at 0 broken by y: (0,2,7) < (0,5,0)

    def test_two_clusters_one_seed_each(self):
        # six points: tight cluster at origin, tight cluster at (10,0,0)
        pts = np.array([
            [0.0, 0, 0], [0.1, 0, 0], [0.0, 0.1, 0],
            [10.0, 0, 0], [10.1, 0, 0], [10.0, 0.1, 0],
        ])
        idx = farthest_point_indices(pts, 2)
        sides = set(pts[idx][:, 0] > 5)
        assert sides == {True, False}

    def test_n_equals_m_is_permutation(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(10, 3))
        idx = farthest_point_indices(pts, 10)
        assert sorted(idx) == list(range(10))

    def test_too_few_points_rejected(self):
        with pytest.raises(InputError):
            farthest_point_indices(np.zeros((3, 3)), 4)

    def test_permutation_invariant_seed_positions(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(40, 3))
        perm = rng.permutation(40)
        a = pts[farthest_point_indices(pts, 8)]
        b = pts[perm][farthest_point_indices(pts[perm], 8)]
        np.testing.assert_array_equal(a, b)


class TestRadiusGroups:
    def test_nearest_first_and_capped(self):
        pts = np.array([[0.0, 0, 0], [0.1, 0, 0], [0.2, 0, 0],
                        [0.3, 0, 0], [5.0, 0, 0]])
        g = radius_groups(pts, np.array([0]), radius=0.35, cap=3)[0]
        np.testing.assert_array_equal(g, [0, 1, 2])

    def test_empty_radius_falls_back_to_nearest(self):
        pts = np.array([[0.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
        g = radius_groups(pts, np.array([1]), radius=0.5, cap=4)[0]
        np.testing.assert_array_equal(g, [1])  # itself, distance 0


class TestEncodePoints:
    def _encode(self, pts, colors, cfg, seed=0):
        store = ParamStore()
        register_point_encoder(store, "pe", cfg, np.random.default_rng(seed))
        return encode_points_forward(store, "pe", pts, colors, cfg)

    def test_shapes(self):
        rng = np.random.default_rng(1)
        cfg = PointEncoderConfig(n_queries=16, channels=24)
        enc, _ = self._encode(rng.normal(size=(100, 3)),
                              rng.uniform(size=(100, 3)), cfg)
        assert enc.coords.shape == (16, 3)
        assert enc.features.shape == (16, 24)
        assert enc.point_features.shape == (100, 24)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(60, 3))
        colors = rng.uniform(size=(60, 3))
        cfg = PointEncoderConfig(n_queries=12, radius=0.8, channels=16)
        store = ParamStore()
        register_point_encoder(store, "pe", cfg, np.random.default_rng(3))
        enc_a, _ = encode_points_forward(store, "pe", pts, colors, cfg)
        perm = rng.permutation(60)
        enc_b, _ = encode_points_forward(store, "pe", pts[perm], colors[perm],
                                         cfg)
        np.testing.assert_array_equal(enc_a.coords, enc_b.coords)
        np.testing.assert_array_equal(enc_a.features, enc_b.features)

    def test_input_error_when_too_small(self):
        cfg = PointEncoderConfig(n_queries=8, channels=8)
        with pytest.raises(InputError):
            self._encode(np.zeros((4, 3)), np.zeros((4, 3)), cfg)

    def test_gradcheck_module(self):
        for seed in range(2):
            report = run_module_check("backbones", seed)
            assert report.passed, report.line()


class TestImagePyramid:
    def _pyramid(self, raster, channels=8, seed=0):
        store = ParamStore()
        cfg = ImagePyramidConfig(channels=channels)
        register_image_pyramid(store, "ip", cfg, np.random.default_rng(seed))
        return encode_image_pyramid_forward(store, "ip", raster, cfg)

    def test_level_shapes_64(self):
        levels, _ = self._pyramid(np.zeros((64, 64, 4)))
        assert [l.shape[:2] for l in levels] == [(32, 32), (16, 16), (8, 8), (4, 4)]

    def test_constant_raster_constant_features(self):
        levels, _ = self._pyramid(np.full((64, 64, 4), 0.37))
        for lv in levels:
            np.testing.assert_allclose(lv - lv[0, 0], 0.0, atol=1e-12)

    def test_pooling_window_averaging_invariance(self):
        # perturbations that cancel within a level's pooling window leave
        # that level unchanged
        rng = np.random.default_rng(2)
        base = rng.uniform(size=(64, 64, 4))
        store = ParamStore()
        cfg = ImagePyramidConfig(channels=8)
        register_image_pyramid(store, "ip", cfg, np.random.default_rng(0))
        lv1_base, _ = encode_image_pyramid_forward(store, "ip", base, cfg)
        bumped = base.copy()
        # +e and -e inside one 4x4 window of level 1
        bumped[0, 0, 0] += 0.01
        bumped[1, 1, 0] -= 0.01
        lv1_bump, _ = encode_image_pyramid_forward(store, "ip", bumped, cfg)
        # level 0 pools 2x2, so it changes; level 1 pools 4x4 and must not
        assert np.abs(lv1_bump[0] - lv1_base[0]).max() > 0
        np.testing.assert_allclose(lv1_bump[1], lv1_base[1], atol=1e-12)
        np.testing.assert_allclose(lv1_bump[2], lv1_base[2], atol=1e-12)

    def test_non_divisible_rejected(self):
        with pytest.raises(InputError):
            self._pyramid(np.zeros((60, 64, 4)))

    def test_wrong_channels_rejected(self):
        with pytest.raises(InputError):
            self._pyramid(np.zeros((64, 64, 3)))


class TestRasterize:
    def test_single_point_principal_axis(self):
        cam = simple_cam()
        raster = rasterize_scene(np.array([[0.0, 0, 1.0]]),
                                 np.array([[1.0, 0.5, 0.25]]), cam)
        nz = np.argwhere(raster[:, :, 3] > 0)
        assert nz.shape == (1, 2)
        assert tuple(nz[0]) == (32, 32)
        np.testing.assert_allclose(raster[32, 32], [1.0, 0.5, 0.25, 1.0])

    def test_nearer_point_wins(self):
        cam = simple_cam()
        pts = np.array([[0.0, 0, 2.0], [0.0, 0, 1.0]])
        cols = np.array([[1.0, 0, 0], [0.0, 1.0, 0]])
        raster = rasterize_scene(pts, cols, cam)
        np.testing.assert_allclose(raster[32, 32], [0.0, 1.0, 0.0, 1.0])
        # order of points must not matter
        raster2 = rasterize_scene(pts[::-1], cols[::-1], cam)
        np.testing.assert_allclose(raster2[32, 32], [0.0, 1.0, 0.0, 1.0])

    def test_behind_camera_ignored(self):
        cam = simple_cam()
        raster = rasterize_scene(np.array([[0.0, 0, -1.0]]),
                                 np.array([[1.0, 1, 1]]), cam)
        assert not raster.any()

    def test_depth_is_pointwise_minimum(self):
        cam = simple_cam()
        rng = np.random.default_rng(4)
        pts = rng.uniform(-0.5, 0.5, size=(200, 3))
        pts[:, 2] = rng.uniform(0.5, 3.0, size=200)
        cols = rng.uniform(size=(200, 3))
        raster = rasterize_scene(pts, cols, cam)
        px, z, in_front = cam.project_pixels(pts)
        ix = np.rint(px[:, 0]).astype(int)
        iy = np.rint(px[:, 1]).astype(int)
        ok = in_front & (ix >= 0) & (ix < 64) & (iy >= 0) & (iy < 64)
        best = {}
        for i in np.flatnonzero(ok):
            key = (iy[i], ix[i])
            best[key] = min(best.get(key, np.inf), z[i])
        for (r, c), depth in best.items():
            assert raster[r, c, 3] == pytest.approx(depth, abs=1e-12)
