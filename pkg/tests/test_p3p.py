"""Minimal-solver tests: synthetic forward models are the oracle."""

import math

import numpy as np

from visloc.geometry import Pose, normalize, pose_error, rotvec_to_quat
from visloc.p3p import BEARING_TOL, p3p_solve, p3p_solve_batch


def _instance(rng):
    w = rng.normal(size=3)
    w = w / np.linalg.norm(w) * rng.uniform(0, 0.9 * math.pi)
    gt = Pose(rotvec_to_quat(w), rng.normal(size=3))
    xc = np.stack(
        [rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), rng.uniform(1.0, 5.0, 3)], axis=-1
    )
    xw = (xc - gt.t) @ gt.R
    return normalize(xc), xw, gt


def _contains_gt(solutions, gt):
    for sol in solutions:
        pe = pose_error(sol, gt)
        if pe.rotation_error_deg < math.degrees(1e-6) and pe.translation_error_m < 1e-6:
            return True
    return False


def test_recovers_known_pose():
    rng = np.random.default_rng(0)
    bearings, points, gt = _instance(rng)
    assert _contains_gt(p3p_solve(bearings, points), gt)


def test_thousand_random_instances_all_recover():
    rng = np.random.default_rng(1)
    misses = 0
    for _ in range(1000):
        bearings, points, gt = _instance(rng)
        if not _contains_gt(p3p_solve(bearings, points), gt):
            misses += 1
    assert misses == 0


def test_every_solution_satisfies_bearing_constraints():
    rng = np.random.default_rng(2)
    for _ in range(300):
        bearings, points, _ = _instance(rng)
        for sol in p3p_solve(bearings, points):
            pred = normalize(sol.apply(points))
            ang = np.arctan2(
                np.linalg.norm(np.cross(pred, bearings), axis=-1),
                np.sum(pred * bearings, axis=-1),
            )
            assert ang.max() < BEARING_TOL


def test_at_most_four_solutions():
    rng = np.random.default_rng(3)
    for _ in range(300):
        bearings, points, _ = _instance(rng)
        assert len(p3p_solve(bearings, points)) <= 4


def test_collinear_points_give_empty_list():
    points = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 3.0], [0.0, 0.0, 4.0]])
    assert p3p_solve(normalize(points), points) == []

    points = np.array([[0.1, 0.2, 2.0], [0.2, 0.4, 4.0], [0.3, 0.6, 6.0]])
    assert p3p_solve(normalize(points), points) == []


def test_coincident_points_give_empty_list():
    points = np.array([[0.5, 0.1, 2.0], [0.5, 0.1, 2.0], [0.0, -0.4, 3.0]])
    bearings = normalize(np.array([[0.1, 0.0, 1.0], [0.3, 0.2, 1.0], [0.0, -0.1, 1.0]]))
    assert p3p_solve(bearings, points) == []


def test_batch_matches_scalar_solver():
    rng = np.random.default_rng(4)
    all_bearings, all_points, gts = [], [], []
    for _ in range(50):
        b, p, gt = _instance(rng)
        all_bearings.append(b)
        all_points.append(p)
        gts.append(gt)
    R, t, sample = p3p_solve_batch(np.stack(all_bearings), np.stack(all_points))
    for i in range(50):
        scalar = p3p_solve(all_bearings[i], all_points[i])
        batch_idx = np.nonzero(sample == i)[0]
        assert len(scalar) == len(batch_idx)
        for sol, bi in zip(scalar, batch_idx):
            np.testing.assert_allclose(sol.R, R[bi], atol=1e-12)
            np.testing.assert_allclose(sol.t, t[bi], atol=1e-12)
