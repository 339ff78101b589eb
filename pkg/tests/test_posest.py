"""LO-RANSAC tests against synthetic forward models."""

import math

import numpy as np
import pytest

from visloc.geometry import CameraIntrinsics, Pose, pose_error, rotvec_to_quat
from visloc.posest import (
    Match2D3D,
    RansacConfig,
    UnderConstrainedError,
    msac_score,
    ransac_pnp,
    required_iterations,
)

INTR = CameraIntrinsics(700.0, 700.0, 350.0, 350.0, 700, 700)
GT = Pose(rotvec_to_quat(np.array([0.05, -0.1, 0.2])), np.array([0.1, 0.2, 0.3]))


def _matches(n, outlier_frac=0.0, sigma=0.0, seed=0):
    rng = np.random.default_rng(seed)
    xc = np.stack([rng.uniform(-1.2, 1.2, n), rng.uniform(-1.2, 1.2, n),
                   rng.uniform(2.0, 5.0, n)], axis=-1)
    xw = (xc - GT.t) @ GT.R
    z = xc[:, 2]
    px = np.stack([INTR.fx * xc[:, 0] / z + INTR.cx,
                   INTR.fy * xc[:, 1] / z + INTR.cy], axis=-1)
    w = rng.uniform(0.5, 1.0, n)
    outliers = rng.random(n) < outlier_frac
    px = px + rng.normal(0, 1.0, (n, 2)) * sigma
    px[outliers] = rng.uniform(0, 700, (int(outliers.sum()), 2))
    w[outliers] = rng.uniform(0.05, 0.3, int(outliers.sum()))
    return px, xw, w, outliers


class TestRequiredIterations:
    def test_closed_form_values(self):
        assert required_iterations(0.5, 1e-4, 3) == 69
        assert required_iterations(0.1, 1e-4, 3) == 9206

    def test_all_inliers_needs_one(self):
        assert required_iterations(1.0, 1e-4, 3) == 1

    def test_zero_ratio_hits_cap(self):
        assert required_iterations(0.0, 1e-4, 3, max_iterations=12345) == 12345

    def test_monotone_decreasing_in_ratio(self):
        vals = [required_iterations(e, 1e-4, 3) for e in np.linspace(0.05, 1.0, 25)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


class TestMsacScore:
    def test_truncation_forced(self):
        # two matches: one exact, one 2*tau away -> cost tau^2, one inlier
        tau = 5.0
        pose = Pose.identity()
        xw = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]])
        px0 = np.array([INTR.cx, INTR.cy])
        px = np.stack([px0, px0 + np.array([2 * tau, 0.0])])
        cost, flags = msac_score(pose, (px, xw, np.ones(2)), INTR, tau)
        assert cost == pytest.approx(tau * tau)
        assert list(flags) == [True, False]

    def test_all_exact_costs_zero(self):
        px, xw, w, _ = _matches(100)
        cost, flags = msac_score(GT, (px, xw, w), INTR, 12.0)
        assert cost == pytest.approx(0.0, abs=1e-12)
        assert flags.all()

    def test_halving_weights_halves_cost(self):
        px, xw, w, _ = _matches(200, outlier_frac=0.3, seed=1)
        c1, f1 = msac_score(GT, (px, xw, w), INTR, 12.0)
        c2, f2 = msac_score(GT, (px, xw, w / 2), INTR, 12.0)
        assert c2 == pytest.approx(c1 / 2, rel=1e-12)
        assert np.array_equal(f1, f2)

    def test_behind_camera_counts_as_truncated(self):
        pose = Pose.identity()
        xw = np.array([[0.0, 0.0, -2.0]])
        cost, flags = msac_score(pose, (np.array([[350.0, 350.0]]), xw, np.array([1.0])),
                                 INTR, 10.0)
        assert cost == pytest.approx(100.0)
        assert not flags[0]

    def test_cost_non_increasing_when_errors_shrink(self):
        px, xw, w, _ = _matches(50, sigma=3.0, seed=2)
        base, _ = msac_score(GT, (px, xw, w), INTR, 12.0)
        exact_px, _, _, _ = _matches(50, sigma=0.0, seed=2)
        better, _ = msac_score(GT, (exact_px, xw, w), INTR, 12.0)
        assert better <= base


class TestRansacPnp:
    def test_exact_matches_recover_pose_in_one_batch(self):
        px, xw, w, _ = _matches(2000)
        est = ransac_pnp((px, xw, w), INTR, RansacConfig(seed=5))
        pe = pose_error(est.pose, GT)
        assert est.converged
        assert pe.rotation_error_deg < 1e-6
        assert pe.translation_error_m < 1e-6
        assert est.iterations == 1000  # stops right after the first batch
        assert est.inlier_count == 2000

    def test_fifty_percent_outliers(self):
        px, xw, w, outliers = _matches(2000, outlier_frac=0.5, seed=3)
        est = ransac_pnp((px, xw, w), INTR, RansacConfig(seed=5))
        pe = pose_error(est.pose, GT)
        assert pe.rotation_error_deg < 1e-6
        assert pe.translation_error_m < 1e-6
        assert np.array_equal(est.inlier_flags, ~outliers)

    def test_under_constrained_raises(self):
        px, xw, w, _ = _matches(2)
        with pytest.raises(UnderConstrainedError):
            ransac_pnp((px, xw, w), INTR, RansacConfig(seed=0))

    def test_match_objects_accepted(self):
        px, xw, w, _ = _matches(50)
        matches = [Match2D3D(px[i], xw[i], float(w[i]), "e") for i in range(50)]
        est = ransac_pnp(matches, INTR, RansacConfig(seed=1))
        assert est.converged
        assert pose_error(est.pose, GT).translation_error_m < 1e-6

    def test_bit_identical_across_runs(self):
        px, xw, w, _ = _matches(1500, outlier_frac=0.4, sigma=0.5, seed=4)
        cfg = RansacConfig(seed=9)
        a = ransac_pnp((px, xw, w), INTR, cfg)
        b = ransac_pnp((px, xw, w), INTR, cfg)
        assert np.array_equal(a.pose.q, b.pose.q)
        assert np.array_equal(a.pose.t, b.pose.t)
        assert a.score == b.score
        assert a.iterations == b.iterations
        assert np.array_equal(a.inlier_flags, b.inlier_flags)

    def test_different_seed_still_converges(self):
        px, xw, w, _ = _matches(800, outlier_frac=0.3, seed=6)
        for seed in (0, 1, 2):
            est = ransac_pnp((px, xw, w), INTR, RansacConfig(seed=seed))
            assert pose_error(est.pose, GT).translation_error_m < 1e-6

    def test_subsampled_scoring_set(self):
        # more matches than max_scoring still recovers the pose; with 4600
        # uniform outliers a handful land inside the tau window and tug the
        # Cauchy refinement at the 1e-6 scale, hence the looser bound here
        px, xw, w, _ = _matches(23_000, outlier_frac=0.2, seed=7)
        est = ransac_pnp((px, xw, w), INTR, RansacConfig(seed=2))
        assert pose_error(est.pose, GT).translation_error_m < 1e-4

    def test_weight_zero_match_rejected_at_construction(self):
        with pytest.raises(ValueError):
            Match2D3D(np.zeros(2), np.zeros(3), 0.0)

    def test_full_set_inliers_not_lost_by_refinement_on_exact_data(self):
        px, xw, w, outliers = _matches(1200, outlier_frac=0.35, seed=8)
        est = ransac_pnp((px, xw, w), INTR, RansacConfig(seed=11))
        # every true inlier stays an inlier of the final pose
        assert est.inlier_flags[~outliers].all()

    def test_degenerate_only_matches_fail_cleanly(self):
        # all matches share one world point: no sample is solvable
        px = np.tile(np.array([[350.0, 350.0]]), (5, 1))
        xw = np.tile(np.array([[0.0, 0.0, 2.0]]), (5, 1))
        est = ransac_pnp((px, xw, np.ones(5)), INTR,
                         RansacConfig(seed=0, max_iterations=2000))
        assert not est.converged
        assert est.iterations == 2000

    def test_noisy_inliers_give_tight_pose(self):
        px, xw, w, _ = _matches(3000, outlier_frac=0.3, sigma=1.0, seed=9)
        est = ransac_pnp((px, xw, w), INTR, RansacConfig(seed=3))
        pe = pose_error(est.pose, GT)
        assert pe.rotation_error_deg < 0.05
        assert pe.translation_error_m < 0.01


class TestConfigValidation:
    def test_bad_tau(self):
        with pytest.raises(ValueError):
            RansacConfig(reproj_threshold=0.0)

    def test_batch_larger_than_max(self):
        with pytest.raises(ValueError):
            RansacConfig(max_iterations=10, batch_size=100)

    def test_cauchy_defaults_to_tau(self):
        assert RansacConfig(reproj_threshold=7.0).cauchy == 7.0
        assert RansacConfig(reproj_threshold=7.0, cauchy_scale=3.0).cauchy == 3.0
