"""LM refinement tests: finite-difference Jacobians and convergence behavior."""

import math

import numpy as np
import pytest

from visloc.geometry import CameraIntrinsics, Pose, pose_error, rotvec_to_quat
from visloc.refine import (
    CauchyLoss,
    TruncatedLoss,
    apply_delta,
    pose_jacobian,
    pose_residuals,
    refine_pose,
    robust_cost,
)

INTR = CameraIntrinsics(500.0, 470.0, 320.0, 240.0, 640, 480)


def _problem(rng, n=80, pix_noise=0.0):
    pose = Pose(rotvec_to_quat(rng.normal(size=3) * 0.4), rng.normal(size=3) * 0.3)
    xc = np.stack([rng.uniform(-1.2, 1.2, n), rng.uniform(-1.0, 1.0, n),
                   rng.uniform(2.0, 6.0, n)], axis=-1)
    xw = (xc - pose.t) @ pose.R
    px = np.stack([
        INTR.fx * xc[:, 0] / xc[:, 2] + INTR.cx,
        INTR.fy * xc[:, 1] / xc[:, 2] + INTR.cy,
    ], axis=-1)
    if pix_noise:
        px = px + rng.normal(0, pix_noise, px.shape)
    return pose, xw, px


class TestJacobian:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(100):
            pose, xw, px = _problem(rng, n=20, pix_noise=2.0)
            J = pose_jacobian(pose, xw, INTR)
            h = 1e-6
            J_fd = np.zeros_like(J)
            for k in range(6):
                d = np.zeros(6)
                d[k] = h
                rp, _ = pose_residuals(apply_delta(pose, d), xw, px, INTR)
                rm, _ = pose_residuals(apply_delta(pose, -d), xw, px, INTR)
                J_fd[:, :, k] = (rp - rm) / (2 * h)
            worst = max(worst, float(np.abs(J - J_fd).max() / np.abs(J_fd).max()))
        assert worst < 1e-4

    def test_behind_camera_rows_zeroed(self):
        pose = Pose.identity()
        xw = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -2.0]])
        J = pose_jacobian(pose, xw, INTR)
        assert np.abs(J[0]).max() > 0
        assert np.abs(J[1]).max() == 0


class TestLosses:
    def test_truncated_matches_msac_definition(self):
        loss = TruncatedLoss(3.0)
        e2 = np.array([0.0, 8.9, 9.0, 100.0])
        np.testing.assert_allclose(loss.rho(e2), [0.0, 8.9, 9.0, 9.0])
        np.testing.assert_allclose(loss.weight(e2), [1.0, 1.0, 0.0, 0.0])

    def test_cauchy_formula(self):
        c = 2.0
        loss = CauchyLoss(c)
        e2 = np.array([0.0, 4.0, 16.0])
        expected = 0.5 * c * c * np.log1p(e2 / (c * c))
        np.testing.assert_allclose(loss.rho(e2), expected)

    def test_invalid_scales_rejected(self):
        with pytest.raises(ValueError):
            TruncatedLoss(0.0)
        with pytest.raises(ValueError):
            CauchyLoss(-1.0)


class TestRefinePose:
    def test_stationary_at_ground_truth(self):
        rng = np.random.default_rng(1)
        pose, xw, px = _problem(rng)
        res = refine_pose(pose, xw, px, np.ones(len(xw)), CauchyLoss(12.0), INTR)
        pe = pose_error(res.pose, pose)
        assert res.converged
        assert pe.rotation_error_deg < 1e-10
        assert pe.translation_error_m < 1e-12

    def test_recovers_from_perturbation_on_exact_data(self):
        rng = np.random.default_rng(2)
        pose, xw, px = _problem(rng, n=200)
        start = apply_delta(pose, np.array([0.006, -0.005, 0.007, 0.03, -0.02, 0.04]))
        # perturbation is ~0.5 deg / 0.05 m
        assert pose_error(start, pose).rotation_error_deg > 0.3
        res = refine_pose(start, xw, px, np.ones(200), CauchyLoss(12.0), INTR)
        pe = pose_error(res.pose, pose)
        assert pe.rotation_error_deg < math.degrees(1e-8)
        assert pe.translation_error_m < 1e-8

    def test_truncated_loss_also_recovers(self):
        rng = np.random.default_rng(3)
        pose, xw, px = _problem(rng, n=200)
        start = apply_delta(pose, np.array([0.004, 0.003, -0.002, -0.02, 0.01, 0.02]))
        res = refine_pose(start, xw, px, np.ones(200), TruncatedLoss(12.0), INTR)
        pe = pose_error(res.pose, pose)
        assert pe.translation_error_m < 1e-8

    def test_cost_trace_non_increasing(self):
        rng = np.random.default_rng(4)
        pose, xw, px = _problem(rng, n=300, pix_noise=1.5)
        start = apply_delta(pose, np.array([0.01, -0.01, 0.005, 0.05, 0.02, -0.04]))
        res = refine_pose(start, xw, px, rng.uniform(0.3, 1.0, 300), CauchyLoss(6.0), INTR)
        for a, b in zip(res.cost_trace, res.cost_trace[1:]):
            assert b <= a

    def test_weight_scaling_leaves_argmin_unchanged(self):
        rng = np.random.default_rng(5)
        pose, xw, px = _problem(rng, n=150, pix_noise=1.0)
        start = apply_delta(pose, np.array([0.004, 0.002, -0.006, 0.02, -0.03, 0.01]))
        w = rng.uniform(0.2, 1.0, 150)
        a = refine_pose(start, xw, px, w, CauchyLoss(8.0), INTR)
        b = refine_pose(start, xw, px, 7.3 * w, CauchyLoss(8.0), INTR)
        assert np.abs(a.pose.q - b.pose.q).max() < 1e-9
        assert np.abs(a.pose.t - b.pose.t).max() < 1e-9

    def test_outliers_bounded_by_cauchy(self):
        rng = np.random.default_rng(6)
        pose, xw, px = _problem(rng, n=400)
        out = rng.random(400) < 0.25
        px_noisy = px.copy()
        px_noisy[out] = rng.uniform(0, 640, (int(out.sum()), 2))
        start = apply_delta(pose, np.array([0.003, -0.002, 0.004, 0.02, 0.01, -0.02]))
        res = refine_pose(start, xw, px_noisy, np.ones(400), CauchyLoss(6.0), INTR)
        pe = pose_error(res.pose, pose)
        assert pe.rotation_error_deg < 0.05
        assert pe.translation_error_m < 0.01

    def test_too_few_matches_rejected(self):
        with pytest.raises(ValueError):
            refine_pose(Pose.identity(), np.zeros((2, 3)), np.zeros((2, 2)),
                        np.ones(2), CauchyLoss(1.0), INTR)


class TestRobustCost:
    def test_behind_camera_truncated_contributes_tau_squared(self):
        pose = Pose.identity()
        xw = np.array([[0.0, 0.0, -1.0]])
        cost = robust_cost(pose, xw, np.array([[320.0, 240.0]]), np.array([2.0]),
                           TruncatedLoss(3.0), INTR)
        assert cost == pytest.approx(2.0 * 9.0)

    def test_behind_camera_cauchy_is_infinite(self):
        pose = Pose.identity()
        xw = np.array([[0.0, 0.0, -1.0]])
        cost = robust_cost(pose, xw, np.array([[320.0, 240.0]]), np.array([1.0]),
                           CauchyLoss(3.0), INTR)
        assert math.isinf(cost)
