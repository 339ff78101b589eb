"""Confidence-weighted LO-RANSAC over 2D-3D correspondences.

The estimator follows the classic hypothesize-and-verify recipe with local
optimization:

1. Scoring runs on a reduced correspondence set built by deterministic
   uniform subsampling (every ceil(N / max_scoring)-th match in input
   order); minimal samples are drawn from the full set to preserve
   hypothesis diversity.
2. Per batch, minimal 3-samples are pre-generated from a seeded RNG (so
   results are independent of any scoring parallelism), solved with the
   three-point minimal solver, and every hypothesis is scored against the
   reduced set with the weighted MSAC cost ``sum_i w_i min(e_i^2, tau^2)``.
   Whenever a hypothesis beats the best cost, local optimization refines
   the truncated cost on the reduced set (single LM pass, no inner
   resampling).
3. The loop stops once the executed iteration count (minimal samples
   processed, degenerate ones included) reaches the adaptive bound
   ``ceil(ln eta / ln(1 - eps^3))`` for the best inlier ratio observed on
   the scoring set, or the hard maximum.
4. Final refinement classifies inliers of the best pose on the full set
   and minimizes the confidence-weighted Cauchy loss over them.

Identical inputs and config (seed included) produce bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose
from .p3p import p3p_solve_batch
from .refine import CauchyLoss, TruncatedLoss, refine_pose

__all__ = [
    "Match2D3D",
    "PoseEstimate",
    "RansacConfig",
    "UnderConstrainedError",
    "msac_score",
    "ransac_pnp",
    "required_iterations",
]

_SCORE_CHUNK = 256


class UnderConstrainedError(ValueError):
    """Fewer correspondences than the minimal sample size."""


@dataclass(frozen=True)
class Match2D3D:
    """A query pixel paired with a lifted world point and a confidence weight."""

    query_px: np.ndarray
    world_point: np.ndarray
    weight: float
    entry_id: str = ""

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"match weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 100_000
    batch_size: int = 1_000
    miss_probability: float = 1e-4
    reproj_threshold: float = 12.0
    max_scoring: int = 10_000
    cauchy_scale: float | None = None  # defaults to reproj_threshold
    lm_max_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.reproj_threshold <= 0:
            raise ValueError("reproj_threshold must be positive")
        if not 0 < self.miss_probability < 1:
            raise ValueError("miss_probability must be in (0, 1)")
        if self.batch_size > self.max_iterations:
            raise ValueError("batch_size must not exceed max_iterations")

    @property
    def cauchy(self) -> float:
        return self.reproj_threshold if self.cauchy_scale is None else self.cauchy_scale


@dataclass
class PoseEstimate:
    pose: Pose
    inlier_count: int
    inlier_flags: np.ndarray
    score: float
    iterations: int
    converged: bool

    def __post_init__(self):
        self.inlier_flags = np.asarray(self.inlier_flags, dtype=bool)


def required_iterations(
    inlier_ratio: float, miss_probability: float, sample_size: int = 3,
    max_iterations: int = 100_000,
) -> int:
    """Adaptive RANSAC bound: ceil(ln eta / ln(1 - eps^m)), clamped."""
    eps = min(max(inlier_ratio, 0.0), 1.0)
    if eps <= 0.0:
        return max_iterations
    if eps >= 1.0:
        return 1
    denom = math.log1p(-(eps ** sample_size))
    if denom == 0.0:
        return max_iterations
    n = math.ceil(math.log(miss_probability) / denom)
    return int(min(max(n, 1), max_iterations))


def _match_arrays(matches) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(matches, tuple) and len(matches) == 3:
        px, X, w = matches
        return (
            np.asarray(px, dtype=np.float64).reshape(-1, 2),
            np.asarray(X, dtype=np.float64).reshape(-1, 3),
            np.asarray(w, dtype=np.float64).reshape(-1),
        )
    px = np.array([m.query_px for m in matches], dtype=np.float64).reshape(-1, 2)
    X = np.array([m.world_point for m in matches], dtype=np.float64).reshape(-1, 3)
    w = np.array([m.weight for m in matches], dtype=np.float64)
    return px, X, w


def _errors_sq(R: np.ndarray, t: np.ndarray, X: np.ndarray, px: np.ndarray,
               intr: CameraIntrinsics) -> np.ndarray:
    """Squared reprojection errors; behind-camera points get +inf.

    Operation grouping mirrors _score_hypotheses exactly so both paths
    produce bit-identical costs.
    """
    xc = X @ R.T
    xc += t
    z = xc[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    du = intr.fx * xc[:, 0]
    du /= zs
    du += intr.cx - px[:, 0]
    dv = intr.fy * xc[:, 1]
    dv /= zs
    dv += intr.cy - px[:, 1]
    e2 = du * du
    e2 += dv * dv
    return np.where(front, e2, np.inf)


def msac_score(
    pose: Pose, matches, intr: CameraIntrinsics, tau: float
) -> tuple[float, np.ndarray]:
    """Weighted MSAC cost and inlier flags.

    Cost is ``sum_i w_i min(e_i^2, tau^2)``; behind-camera matches
    contribute ``w_i tau^2``.  A match is an inlier iff it projects in
    front of the camera with error strictly below tau.
    """
    px, X, w = _match_arrays(matches)
    e2 = _errors_sq(pose.R, pose.t, X, px, intr)
    tau2 = tau * tau
    # einsum keeps the accumulation order identical to the batched scorer
    cost = float(np.einsum("n,n->", w, np.minimum(e2, tau2)))
    flags = e2 < tau2
    return cost, flags


def _score_hypotheses(
    Rs: np.ndarray, ts: np.ndarray, X: np.ndarray, px: np.ndarray, w: np.ndarray,
    intr: CameraIntrinsics, tau: float,
) -> np.ndarray:
    """MSAC costs of many hypotheses against one correspondence set.

    Computes in float32 (matching what a GPU scorer would do); the ranking
    this produces feeds hypothesis selection only — definitive costs and
    inlier flags always come from the float64 msac_score.  The camera-frame
    transform is a single (N, 3) x (3, 3H) product per chunk and elementwise
    work runs in-place to stay memory-bound friendly.
    """
    n_h = Rs.shape[0]
    n = X.shape[0]
    X32 = np.ascontiguousarray(X, dtype=np.float32)
    tau2 = np.float32(tau * tau)
    costs = np.empty(n_h, dtype=np.float64)
    du_off = (intr.cx - px[:, 0][:, None]).astype(np.float32)
    dv_off = (intr.cy - px[:, 1][:, None]).astype(np.float32)
    w32 = w.astype(np.float32)
    fx32, fy32 = np.float32(intr.fx), np.float32(intr.fy)
    for start in range(0, n_h, _SCORE_CHUNK):
        sl = slice(start, min(start + _SCORE_CHUNK, n_h))
        h = sl.stop - sl.start
        # (n, 3h): column 3j+i holds (R_j X + t_j)_i
        xc = X32 @ Rs[sl].reshape(3 * h, 3).T.astype(np.float32)
        xc += ts[sl].reshape(1, 3 * h).astype(np.float32)
        xc = xc.reshape(n, h, 3)
        z = xc[:, :, 2]
        front = z > 0
        zs = np.where(front, z, np.float32(1.0))
        du = fx32 * xc[:, :, 0]
        du /= zs
        du += du_off
        dv = fy32 * xc[:, :, 1]
        dv /= zs
        dv += dv_off
        e2 = du * du
        e2 += dv * dv
        np.minimum(e2, tau2, out=e2)
        e2[~front] = tau2
        costs[sl] = np.einsum("n,nh->h", w32, e2)
    return costs


def ransac_pnp(matches, intr: CameraIntrinsics, cfg: RansacConfig) -> PoseEstimate:
    """Estimate a camera-from-world pose from weighted 2D-3D matches.

    ``matches`` is a sequence of Match2D3D (or a prebuilt (pixels, points,
    weights) array triple).  Raises UnderConstrainedError for fewer than 3
    matches; returns ``converged=False`` when no hypothesis reaches 3
    inliers on the full set.
    """
    px, X, w = _match_arrays(matches)
    n = px.shape[0]
    if n < 3:
        raise UnderConstrainedError(f"need >= 3 matches, got {n}")

    stride = math.ceil(n / cfg.max_scoring)
    sub = slice(0, n, stride)
    px_s, X_s, w_s = px[sub], X[sub], w[sub]
    n_sub = px_s.shape[0]
    tau = cfg.reproj_threshold
    trunc = TruncatedLoss(tau)

    rng = np.random.default_rng(cfg.seed)
    bearings_all = _bearings(px, intr)

    best_pose: Pose | None = None
    best_cost = math.inf
    best_sub_inliers = 0
    iters = 0
    while iters < cfg.max_iterations:
        batch_n = min(cfg.batch_size, cfg.max_iterations - iters)
        samples = np.stack([rng.choice(n, size=3, replace=False) for _ in range(batch_n)])
        Rs, ts, hyp_sample = p3p_solve_batch(bearings_all[samples], X[samples])
        iters += batch_n
        if Rs.shape[0] > 0:
            costs = _score_hypotheses(Rs, ts, X_s, px_s, w_s, intr, tau)
            for h in range(costs.shape[0]):  # in order: ties keep earliest
                if costs[h] < best_cost:
                    best_cost = float(costs[h])
                    best_pose = Pose.from_rt(Rs[h], ts[h])
                    lo = refine_pose(
                        best_pose, X_s, px_s, w_s, trunc, intr,
                        max_iters=cfg.lm_max_iters,
                    )
                    lo_cost, _ = msac_score(lo.pose, (px_s, X_s, w_s), intr, tau)
                    if lo_cost < best_cost:
                        best_cost = lo_cost
                        best_pose = lo.pose
        if best_pose is not None:
            _, sub_flags = msac_score(best_pose, (px_s, X_s, w_s), intr, tau)
            best_sub_inliers = int(sub_flags.sum())
            needed = required_iterations(
                best_sub_inliers / n_sub, cfg.miss_probability, 3, cfg.max_iterations
            )
            if iters >= needed:
                break

    if best_pose is None:
        return PoseEstimate(
            pose=Pose.identity(), inlier_count=0, inlier_flags=np.zeros(n, dtype=bool),
            score=math.inf, iterations=iters, converged=False,
        )

    cost_full, flags_full = msac_score(best_pose, (px, X, w), intr, tau)
    if int(flags_full.sum()) < 3:
        return PoseEstimate(
            pose=best_pose, inlier_count=int(flags_full.sum()), inlier_flags=flags_full,
            score=cost_full, iterations=iters, converged=False,
        )

    final = refine_pose(
        best_pose, X[flags_full], px[flags_full], w[flags_full],
        CauchyLoss(cfg.cauchy), intr, max_iters=cfg.lm_max_iters,
    )
    score, flags = msac_score(final.pose, (px, X, w), intr, tau)
    return PoseEstimate(
        pose=final.pose, inlier_count=int(flags.sum()), inlier_flags=flags,
        score=score, iterations=iters, converged=True,
    )


def _bearings(px: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    b = np.stack(
        [
            (px[:, 0] - intr.cx) / intr.fx,
            (px[:, 1] - intr.cy) / intr.fy,
            np.ones(px.shape[0]),
        ],
        axis=-1,
    )
    return b / np.linalg.norm(b, axis=-1, keepdims=True)
