"""Triangulation tests: analytic two-ray cases plus the synthetic oracle."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from visloc.depthbuild import (
    DepthMap,
    Observation,
    TriangulationConfig,
    build_depth_map,
    depth_hypothesis,
    select_covisible,
    triangulate_pixel,
)
from visloc.geometry import CameraIntrinsics, Pose
from visloc.synth import NoiseSpec, SceneSpec, corrupt, make_scene, oracle_field


def _intr(f=100.0, c=50.0, size=100):
    return CameraIntrinsics(f, f, c, c, size, size)


def _obs_for_point(world_point, center, intr=None, conf=1.0):
    """Observation of a world point from an identity-rotation camera at `center`."""
    intr = intr or _intr()
    pose = Pose(np.array([1.0, 0, 0, 0]), -np.asarray(center, dtype=float))
    xc = pose.apply(world_point)
    px = np.array([intr.fx * xc[0] / xc[2] + intr.cx, intr.fy * xc[1] / xc[2] + intr.cy])
    return Observation(pose, intr, px, conf)


class TestDepthHypothesis:
    def test_analytic_two_ray_case(self):
        # reference at origin looking +z; observer at (1, 0, 0); point (0, 0, 2)
        obs = _obs_for_point(np.array([0.0, 0.0, 2.0]), [1.0, 0.0, 0.0])
        d = depth_hypothesis(np.array([0.0, 0.0, 1.0]), np.zeros(3), obs)
        assert d == pytest.approx(2.0, abs=1e-12)

    def test_parallel_rays_return_none(self):
        # pure forward motion: observer behind the reference on the same axis,
        # match exactly on the epipole -> rays are parallel
        obs = Observation(
            Pose(np.array([1.0, 0, 0, 0]), np.array([0.0, 0.0, 1.0])),
            _intr(), np.array([50.0, 50.0]), 1.0,
        )
        assert depth_hypothesis(np.array([0.0, 0.0, 1.0]), np.zeros(3), obs) is None

    def test_negative_depth_returns_none(self):
        # closest point behind the reference camera
        obs = _obs_for_point(np.array([0.0, 0.0, 2.0]), [1.0, 0.0, 0.0])
        d = depth_hypothesis(np.array([0.0, 0.0, -1.0]), np.zeros(3), obs)
        assert d is None

    def test_random_exact_geometry(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            point = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 6)])
            center = rng.normal(size=3) * 0.5
            if abs(center[0]) + abs(center[1]) < 1e-3:
                continue  # nearly parallel rays
            obs = _obs_for_point(point, center)
            ray = point / np.linalg.norm(point)
            d = depth_hypothesis(ray, np.zeros(3), obs)
            assert d is not None
            np.testing.assert_allclose(d, np.linalg.norm(point), rtol=1e-9)


class TestTriangulatePixel:
    def _exact_setup(self, rng, n_obs, point=None):
        point = np.array([0.3, -0.2, 3.0]) if point is None else point
        obs = []
        for k in range(n_obs):
            ang = 2 * math.pi * k / max(n_obs, 1)
            center = np.array([math.cos(ang), math.sin(ang), 0.0]) * 0.8
            obs.append(_obs_for_point(point, center, conf=float(rng.uniform(0.5, 1.0))))
        ray = point / np.linalg.norm(point)
        return ray, obs, float(np.linalg.norm(point))

    def test_five_exact_observations(self):
        rng = np.random.default_rng(1)
        ray, obs, gt = self._exact_setup(rng, 5)
        out = triangulate_pixel(ray, np.zeros(3), obs, TriangulationConfig())
        assert out is not None
        d, inliers = out
        assert inliers == 5
        assert abs(d - gt) / gt < 1e-9

    def test_outliers_rejected_by_voting(self):
        rng = np.random.default_rng(2)
        ray, obs, gt = self._exact_setup(rng, 4)
        # add 3 gross outliers (bogus target pixels)
        for k in range(3):
            pose = Pose(np.array([1.0, 0, 0, 0]), -np.array([0.5 - 0.3 * k, 0.7, 0.0]))
            obs.append(Observation(pose, _intr(), np.array([5.0 + 30 * k, 90.0]), 0.2))
        out = triangulate_pixel(ray, np.zeros(3), obs, TriangulationConfig())
        assert out is not None
        d, inliers = out
        assert inliers == 4
        assert abs(d - gt) / gt < 1e-9

    def test_three_exact_observations_rejected(self):
        # "more than 3 inliers" with matched-observation counting: 3 < 4
        rng = np.random.default_rng(3)
        ray, obs, _ = self._exact_setup(rng, 3)
        assert triangulate_pixel(ray, np.zeros(3), obs, TriangulationConfig()) is None

    def test_refinement_reduces_weighted_cost_under_noise(self):
        rng = np.random.default_rng(4)
        ray, obs, gt = self._exact_setup(rng, 8)
        noisy = [
            Observation(o.pose, o.intrinsics, o.target_px + rng.normal(0, 0.5, 2),
                        o.confidence)
            for o in obs
        ]
        out = triangulate_pixel(ray, np.zeros(3), noisy, TriangulationConfig())
        assert out is not None
        d, inliers = out
        assert inliers == 8
        assert abs(d - gt) / gt < 0.02

    def test_tie_break_keeps_lowest_hypothesis_index(self):
        # two clusters of 2 observations each -> 2-2 tie; first cluster wins
        ray = np.array([0.0, 0.0, 1.0])
        p_near = np.array([0.0, 0.0, 2.0])
        p_far = np.array([0.0, 0.0, 4.0])
        cfg = TriangulationConfig(min_inliers=2)
        obs = [
            _obs_for_point(p_near, [1.0, 0.0, 0.0]),
            _obs_for_point(p_near, [0.0, 1.0, 0.0]),
            _obs_for_point(p_far, [-1.0, 0.0, 0.0]),
            _obs_for_point(p_far, [0.0, -1.0, 0.0]),
        ]
        out = triangulate_pixel(ray, np.zeros(3), obs, cfg)
        assert out is not None
        d, inliers = out
        assert inliers == 2
        assert d == pytest.approx(2.0, rel=1e-9)


def _scene_fixture(n_cams=6, seed=11, spread=0.25):
    f = 70.0
    intr = CameraIntrinsics(f, f, 70.0, 70.0, 140, 140)
    spec = SceneSpec(num_cameras=n_cams, width=140, height=140, camera_spread=spread,
                     camera_backoff=0.25, rotation_jitter_deg=3.0, seed=seed,
                     intrinsics=intr)
    scene = make_scene(spec)
    entry = SimpleNamespace(id=scene.view_id(0), pose=scene.cameras[0][0],
                            intrinsics=scene.cameras[0][1])
    covis = [SimpleNamespace(id=scene.view_id(i), pose=scene.cameras[i][0],
                             intrinsics=scene.cameras[i][1]) for i in range(1, n_cams)]
    return scene, entry, covis


class TestBuildDepthMap:
    def test_oracle_fields_recover_plane(self):
        scene, entry, covis = _scene_fixture()
        grid = 50
        fields = [oracle_field(scene, 0, i, grid, grid) for i in range(1, 6)]
        dm = build_depth_map(entry, covis, fields, TriangulationConfig())
        gt, _ = scene.gt_depth_grid(0, grid, grid)
        assert dm.valid.mean() >= 0.99
        rel = np.abs(dm.values[dm.valid].astype(np.float64) - gt[dm.valid]) / gt[dm.valid]
        assert rel.max() < 1e-6

    def test_all_zero_confidence_gives_empty_map(self):
        scene, entry, covis = _scene_fixture()
        grid = 20
        fields = []
        for i in range(1, 6):
            f = oracle_field(scene, 0, i, grid, grid)
            f.confidence[:] = 0.0
            f.targets[:] = np.nan
            fields.append(f)
        dm = build_depth_map(entry, covis, fields, TriangulationConfig())
        assert not dm.valid.any()

    def test_outlier_corruption_still_recovers_surviving_pixels(self):
        scene, entry, covis = _scene_fixture(n_cams=9, seed=13, spread=0.45)
        grid = 40
        noise = NoiseSpec(sigma_px=0.0, outlier_fraction=0.4)
        fields = [
            corrupt(oracle_field(scene, 0, i, grid, grid), noise, 100 + i)
            for i in range(1, 9)
        ]
        dm = build_depth_map(entry, covis, fields, TriangulationConfig())
        gt, _ = scene.gt_depth_grid(0, grid, grid)
        rel = np.abs(dm.values[dm.valid].astype(np.float64) - gt[dm.valid]) / gt[dm.valid]
        # exact inliers dominate: the vast majority of kept pixels are exact
        assert dm.valid.mean() > 0.6
        assert np.median(rel) < 1e-9
        assert (rel < 1e-6).mean() > 0.97

    def test_matches_scalar_reference_path(self):
        scene, entry, covis = _scene_fixture()
        grid = 16
        noise = NoiseSpec(sigma_px=0.3, outlier_fraction=0.2)
        fields = [
            corrupt(oracle_field(scene, 0, i, grid, grid), noise, 7 + i)
            for i in range(1, 6)
        ]
        cfg = TriangulationConfig()
        dm = build_depth_map(entry, covis, fields, cfg)
        intr = entry.intrinsics
        sx = intr.width / grid
        sy = intr.height / grid
        for row in range(0, grid, 3):
            for col in range(0, grid, 3):
                obs = []
                for i, f in enumerate(fields):
                    c = float(f.confidence[row, col])
                    if c >= cfg.confidence_threshold and c > 0:
                        obs.append(Observation(covis[i].pose, covis[i].intrinsics,
                                               f.targets[row, col], c))
                px = np.array([(col + 0.5) * sx, (row + 0.5) * sy])
                k = np.array([(px[0] - intr.cx) / intr.fx, (px[1] - intr.cy) / intr.fy, 1.0])
                k_norm = np.linalg.norm(k)
                ray = entry.pose.R.T @ (k / k_norm)
                out = triangulate_pixel(ray, entry.pose.center(), obs, cfg)
                if out is None:
                    assert not dm.valid[row, col]
                else:
                    assert dm.valid[row, col]
                    # scalar path returns ray depth; the map stores z-depth
                    assert abs(out[0] / k_norm - float(dm.values[row, col])) < 1e-5

    def test_chunk_size_does_not_change_output(self):
        scene, entry, covis = _scene_fixture()
        grid = 24
        fields = [oracle_field(scene, 0, i, grid, grid) for i in range(1, 6)]
        cfg = TriangulationConfig()
        a = build_depth_map(entry, covis, fields, cfg, chunk_pixels=64)
        b = build_depth_map(entry, covis, fields, cfg, chunk_pixels=4096)
        assert np.array_equal(a.valid, b.valid)
        assert np.array_equal(a.values, b.values)

    def test_rigid_transform_invariance(self):
        # a global rigid transform of all poses leaves reference-frame depth unchanged
        from visloc.geometry import rotvec_to_quat

        scene, entry, covis = _scene_fixture()
        grid = 20
        fields = [oracle_field(scene, 0, i, grid, grid) for i in range(1, 6)]
        cfg = TriangulationConfig()
        base = build_depth_map(entry, covis, fields, cfg)
        g = Pose(rotvec_to_quat(np.array([0.3, -0.5, 0.2])), np.array([4.0, -2.0, 1.0]))
        entry_g = SimpleNamespace(id=entry.id, pose=entry.pose.compose(g),
                                  intrinsics=entry.intrinsics)
        covis_g = [SimpleNamespace(id=c.id, pose=c.pose.compose(g), intrinsics=c.intrinsics)
                   for c in covis]
        moved = build_depth_map(entry_g, covis_g, fields, cfg)
        assert np.array_equal(base.valid, moved.valid)
        rel = np.abs(base.values[base.valid].astype(np.float64)
                     - moved.values[base.valid].astype(np.float64)) \
            / base.values[base.valid].astype(np.float64)
        assert rel.max() < 1e-6

    def test_mismatched_pairing_rejected(self):
        scene, entry, covis = _scene_fixture()
        fields = [oracle_field(scene, 0, i, 10, 10) for i in range(1, 6)]
        with pytest.raises(ValueError):
            build_depth_map(entry, covis[::-1], fields, TriangulationConfig())


class TestSelectCovisible:
    def _map(self, n=4):
        rng = np.random.default_rng(0)
        entries = []
        for i in range(n):
            desc = rng.normal(size=8).astype(np.float32)
            entries.append(SimpleNamespace(id=f"e{i}", descriptor=desc))
        return SimpleNamespace(entries=entries)

    def test_k_exceeding_pool_returns_all_others(self):
        vmap = self._map(3)
        got = select_covisible(vmap.entries[0], vmap, 50)
        assert sorted(e.id for e in got) == ["e1", "e2"]

    def test_never_returns_self(self):
        vmap = self._map(5)
        for e in vmap.entries:
            assert e.id not in [c.id for c in select_covisible(e, vmap, 10)]

    def test_order_matches_retrieval_topk(self):
        from visloc.retrieval import DescriptorIndex

        vmap = self._map(6)
        entry = vmap.entries[0]
        got = [e.id for e in select_covisible(entry, vmap, 3)]
        index = DescriptorIndex.from_entries(
            (e.id, e.descriptor) for e in vmap.entries if e.id != entry.id
        )
        expected = [i for i, _ in index.topk(entry.descriptor.astype(np.float64), 3)]
        assert got == expected


class TestDepthMapType:
    def test_valid_pixels_must_be_positive(self):
        with pytest.raises(ValueError):
            DepthMap(values=np.zeros((2, 2), np.float32),
                     valid=np.ones((2, 2), bool), intrinsics=_intr())

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            DepthMap(values=np.ones((2, 3), np.float32),
                     valid=np.ones((2, 2), bool), intrinsics=_intr())
