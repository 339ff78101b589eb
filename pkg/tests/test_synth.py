"""Synthetic-scene oracle tests: determinism, geometric consistency, corruption."""

import numpy as np
import pytest

from visloc.geometry import CameraIntrinsics, project
from visloc.synth import (
    NoiseSpec,
    SceneSpec,
    corrupt,
    make_queries,
    make_scene,
    oracle_field,
    view_descriptor,
)


def _plane_scene(seed=3, n=4, **kw):
    return make_scene(SceneSpec(num_cameras=n, width=100, height=100, seed=seed, **kw))


class TestMakeScene:
    def test_seed_determinism(self):
        s1 = make_scene(SceneSpec(seed=42))
        s2 = make_scene(SceneSpec(seed=42))
        for (p1, _), (p2, _) in zip(s1.cameras, s2.cameras):
            assert np.array_equal(p1.q, p2.q)
            assert np.array_equal(p1.t, p2.t)

    def test_different_seed_differs(self):
        s1 = make_scene(SceneSpec(seed=1))
        s2 = make_scene(SceneSpec(seed=2))
        assert not np.array_equal(s1.cameras[1][0].t, s2.cameras[1][0].t)

    def test_fronto_parallel_plane_depth_constant(self):
        # camera one (index 0) is canonical; plane at the mid depth
        scene = make_scene(
            SceneSpec(num_cameras=2, depth_min=1.5, depth_max=2.5, camera_spread=0.5,
                      rotation_jitter_deg=0.0, seed=7)
        )
        depth, valid = scene.gt_depth_grid(0, 25, 25)
        assert valid.all()
        np.testing.assert_allclose(depth, 2.0)

    def test_depth_reprojects_into_covisible_views(self):
        scene = _plane_scene()
        grid = 20
        px = scene.grid_pixels(0, grid, grid).reshape(-1, 2)
        d, valid = scene.gt_depth_at(0, px)
        pose_a, intr_a = scene.cameras[0]
        k = np.stack(
            [(px[:, 0] - intr_a.cx) / intr_a.fx, (px[:, 1] - intr_a.cy) / intr_a.fy,
             np.ones(len(px))], axis=-1)
        xw = (k * d[:, None] - pose_a.t) @ pose_a.R
        for b in range(1, len(scene.cameras)):
            field = oracle_field(scene, 0, b, grid, grid)
            conf = field.confidence.reshape(-1)
            tgt = field.targets.reshape(-1, 2)
            pose_b, intr_b = scene.cameras[b]
            for i in np.nonzero(conf > 0)[0]:
                reproj = project(intr_b, pose_b, xw[i])
                assert np.linalg.norm(reproj - tgt[i]) < 1e-6

    def test_degenerate_spec_rejected(self):
        with pytest.raises(ValueError):
            SceneSpec(width=0)
        with pytest.raises(ValueError):
            SceneSpec(num_cameras=1)
        with pytest.raises(ValueError):
            SceneSpec(depth_min=2.0, depth_max=1.0)

    def test_points_scene_rasterizes_points(self):
        scene = make_scene(SceneSpec(kind="points", num_points=200, seed=5,
                                     width=64, height=64))
        depth, valid = scene.gt_depth_grid(0, 64, 64)
        assert 0 < valid.sum() <= 200
        assert np.all(depth[valid] > 0)


class TestOracleField:
    def test_self_field_is_identity_warp(self):
        scene = _plane_scene()
        f = oracle_field(scene, 0, 0, 30, 30)
        src = scene.grid_pixels(0, 30, 30).reshape(-1, 2)
        conf = f.confidence.reshape(-1)
        tgt = f.targets.reshape(-1, 2)
        hit = conf > 0
        assert hit.any()
        assert np.abs(tgt[hit] - src[hit]).max() < 1e-9

    def test_ray_missing_geometry_gets_zero_confidence(self):
        # shrink the plane patch so border rays miss it
        scene = _plane_scene()
        scene.plane_half_extent = (0.3, 0.3)
        f = oracle_field(scene, 0, 1, 40, 40)
        conf = f.confidence
        assert conf[0, 0] == 0.0 and conf[-1, -1] == 0.0
        assert (conf > 0).any()

    def test_sparse_points_fields(self):
        scene = make_scene(SceneSpec(kind="points", num_points=100, seed=9,
                                     width=64, height=64))
        f = oracle_field(scene, 0, 1, 64, 64)
        n_scene = (f.confidence > 0).sum()
        assert 0 < n_scene <= 100
        # every emitted target reprojects its world point exactly
        pose_b, intr_b = scene.cameras[1]
        _, valid, idx = scene._rasterize_points(0, 64, 64)
        rows, cols = np.nonzero(valid)
        for r, c in zip(rows, cols):
            if f.confidence[r, c] > 0:
                reproj = project(intr_b, pose_b, scene.points[idx[r, c]])
                assert np.linalg.norm(reproj - f.targets[r, c]) < 1e-6


class TestCorrupt:
    def test_noop_preserves_targets(self):
        scene = _plane_scene()
        f = oracle_field(scene, 0, 1, 20, 20)
        g = corrupt(f, NoiseSpec(sigma_px=0.0, outlier_fraction=0.0), seed=1)
        m = f.confidence > 0
        np.testing.assert_array_equal(g.targets[m], f.targets[m])
        assert np.array_equal(g.confidence > 0, f.confidence > 0)
        assert g.confidence[m].min() >= 0.5 and g.confidence[m].max() <= 1.0

    def test_seed_determinism(self):
        scene = _plane_scene()
        f = oracle_field(scene, 0, 1, 20, 20)
        noise = NoiseSpec(sigma_px=1.0, outlier_fraction=0.3)
        g1 = corrupt(f, noise, seed=11)
        g2 = corrupt(f, noise, seed=11)
        assert np.array_equal(g1.targets, g2.targets, equal_nan=True)
        assert np.array_equal(g1.confidence, g2.confidence)

    def test_all_outliers_displace_targets_uniformly(self):
        scene = _plane_scene()
        f = oracle_field(scene, 0, 1, 40, 40)
        g = corrupt(f, NoiseSpec(sigma_px=0.0, outlier_fraction=1.0), seed=2)
        m = f.confidence > 0
        disp = np.linalg.norm(g.targets[m] - f.targets[m], axis=-1)
        # beyond 3 px except by chance (uniform redraw over a 100px image)
        assert (disp < 3.0).mean() < 0.02
        # crude uniformity check: chi^2 over a 4x4 histogram of new targets
        xs = np.clip((g.targets[m][:, 0] / 25).astype(int), 0, 3)
        ys = np.clip((g.targets[m][:, 1] / 25).astype(int), 0, 3)
        hist = np.bincount(ys * 4 + xs, minlength=16).astype(float)
        expected = hist.sum() / 16
        chi2 = float(((hist - expected) ** 2 / expected).sum())
        # 15 dof: far below an extreme quantile, far above 0
        assert chi2 < 60.0

    def test_outlier_confidences_from_outlier_model(self):
        scene = _plane_scene()
        f = oracle_field(scene, 0, 1, 30, 30)
        g = corrupt(f, NoiseSpec(sigma_px=0.0, outlier_fraction=1.0), seed=3)
        m = f.confidence > 0
        assert g.confidence[m].max() <= 0.3

    def test_invalid_cells_untouched(self):
        scene = _plane_scene()
        scene.plane_half_extent = (0.4, 0.4)
        f = oracle_field(scene, 0, 1, 20, 20)
        g = corrupt(f, NoiseSpec(sigma_px=2.0, outlier_fraction=0.5), seed=4)
        inv = f.confidence == 0
        assert inv.any()
        assert np.all(g.confidence[inv] == 0.0)

    def test_noise_spec_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec(sigma_px=-1.0)
        with pytest.raises(ValueError):
            NoiseSpec(outlier_fraction=1.5)


class TestDescriptorsAndQueries:
    def test_descriptor_unit_norm_and_deterministic(self):
        scene = _plane_scene()
        for pose, _ in scene.cameras:
            d1 = view_descriptor(pose)
            d2 = view_descriptor(pose)
            assert np.array_equal(d1, d2)
            assert abs(np.linalg.norm(d1.astype(np.float64)) - 1.0) < 1e-6

    def test_nearby_views_are_more_similar(self):
        scene = make_scene(SceneSpec(num_cameras=2, camera_spread=0.05, seed=1))
        far = make_scene(SceneSpec(num_cameras=2, camera_spread=2.5, seed=1))
        d0 = view_descriptor(scene.cameras[0][0]).astype(np.float64)
        near_sim = float(d0 @ view_descriptor(scene.cameras[1][0]).astype(np.float64))
        far_sim = float(d0 @ view_descriptor(far.cameras[1][0]).astype(np.float64))
        assert near_sim > far_sim

    def test_make_queries_deterministic(self):
        scene = _plane_scene()
        q1 = make_queries(scene, 4, seed=5)
        q2 = make_queries(scene, 4, seed=5)
        for (p1, _, id1), (p2, _, id2) in zip(q1, q2):
            assert id1 == id2
            assert np.array_equal(p1.q, p2.q) and np.array_equal(p1.t, p2.t)
