"""Levenberg-Marquardt pose refinement over a 6-DoF local parameterization.

The state is a camera-from-world pose; updates left-compose a small rigid
motion: for delta = (omega, nu),

    R <- exp([omega]x) R,      t <- exp([omega]x) t + nu ,

so the residual Jacobian of the reprojection r_i = pi(R X_i + t) - p_i at
delta = 0 is ``dpi/dX_cam @ [ -[X_cam]x | I ]``.

Supported robust losses (as functions of the squared pixel error e2):

* truncated:  rho(e2) = min(e2, tau^2)  (MSAC; same cost RANSAC scores)
* cauchy:     rho(e2) = (c^2 / 2) * ln(1 + e2 / c^2)

Total cost is ``sum_i w_i rho(e2_i)`` with per-match weights w.  Points
behind the camera contribute w * tau^2 under the truncated loss and an
infinite cost under Cauchy (such steps are rejected).  Accepted LM steps
never increase the cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, quat_multiply, rotvec_to_quat

__all__ = [
    "CauchyLoss",
    "RefineResult",
    "TruncatedLoss",
    "apply_delta",
    "pose_jacobian",
    "pose_residuals",
    "refine_pose",
    "robust_cost",
]


@dataclass(frozen=True)
class TruncatedLoss:
    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def rho(self, e2: np.ndarray) -> np.ndarray:
        return np.minimum(e2, self.tau * self.tau)

    def weight(self, e2: np.ndarray) -> np.ndarray:
        return (e2 < self.tau * self.tau).astype(np.float64)

    def behind_cost(self) -> float:
        return self.tau * self.tau


@dataclass(frozen=True)
class CauchyLoss:
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def rho(self, e2: np.ndarray) -> np.ndarray:
        c2 = self.scale * self.scale
        return 0.5 * c2 * np.log1p(e2 / c2)

    def weight(self, e2: np.ndarray) -> np.ndarray:
        return 0.5 / (1.0 + e2 / (self.scale * self.scale))

    def behind_cost(self) -> float:
        return math.inf


def apply_delta(pose: Pose, delta: np.ndarray) -> Pose:
    """Left-compose the 6-vector (omega, nu) onto a pose."""
    omega = np.asarray(delta[:3], dtype=np.float64)
    nu = np.asarray(delta[3:6], dtype=np.float64)
    dq = rotvec_to_quat(omega)
    q = quat_multiply(dq, pose.q)
    R_delta = Pose(dq, np.zeros(3)).R
    return Pose(q, R_delta @ pose.t + nu)


def pose_residuals(
    pose: Pose, points: np.ndarray, pixels: np.ndarray, intr: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Reprojection residuals (N, 2) and camera-frame z (N,)."""
    xc = pose.apply(points)
    z = xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * xc[:, 0] / z + intr.cx
        v = intr.fy * xc[:, 1] / z + intr.cy
    res = np.stack([u, v], axis=-1) - pixels
    return res, z


def pose_jacobian(pose: Pose, points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Analytic residual Jacobian (N, 2, 6) at delta = 0; columns (omega, nu).

    Rows for points at or behind the camera plane are zeroed.
    """
    xc = pose.apply(points)
    n = xc.shape[0]
    x, y, z = xc[:, 0], xc[:, 1], xc[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    # dpi/dX_cam
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = intr.fx / zs
    dpi[:, 0, 2] = -intr.fx * x / (zs * zs)
    dpi[:, 1, 1] = intr.fy / zs
    dpi[:, 1, 2] = -intr.fy * y / (zs * zs)
    # dX_cam/d(omega) = -[X_cam]x ; dX_cam/d(nu) = I
    dxc = np.zeros((n, 3, 6))
    dxc[:, 0, 1] = z
    dxc[:, 0, 2] = -y
    dxc[:, 1, 0] = -z
    dxc[:, 1, 2] = x
    dxc[:, 2, 0] = y
    dxc[:, 2, 1] = -x
    dxc[:, 0, 3] = 1.0
    dxc[:, 1, 4] = 1.0
    dxc[:, 2, 5] = 1.0
    J = np.einsum("nij,njk->nik", dpi, dxc)
    J[~front] = 0.0
    return J


def robust_cost(
    pose: Pose,
    points: np.ndarray,
    pixels: np.ndarray,
    weights: np.ndarray,
    loss,
    intr: CameraIntrinsics,
) -> float:
    res, z = pose_residuals(pose, points, pixels, intr)
    e2 = np.sum(res * res, axis=-1)
    front = z > 0
    if not front.all() and math.isinf(loss.behind_cost()):
        return math.inf
    per = np.where(front, loss.rho(np.where(front, e2, 0.0)), loss.behind_cost())
    return float(np.sum(weights * per))


@dataclass
class RefineResult:
    pose: Pose
    converged: bool
    iterations: int
    cost_trace: list[float] = field(default_factory=list)

    @property
    def final_cost(self) -> float:
        return self.cost_trace[-1] if self.cost_trace else math.nan


def refine_pose(
    initial: Pose,
    points: np.ndarray,
    pixels: np.ndarray,
    weights: np.ndarray,
    loss,
    intr: CameraIntrinsics,
    max_iters: int = 100,
    gradient_tol: float = 1e-10,
    cost_tol: float = 1e-12,
) -> RefineResult:
    """LM minimization of the weighted robust reprojection cost.

    Terminates on gradient norm < gradient_tol, relative cost change
    < cost_tol, or max_iters; non-convergence returns the last iterate with
    ``converged=False``.  ``cost_trace`` records the accepted-cost sequence
    (non-increasing by construction).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if points.shape[0] < 3:
        raise ValueError(f"refinement needs >= 3 matches, got {points.shape[0]}")

    pose = initial
    cost = robust_cost(pose, points, pixels, weights, loss, intr)
    trace = [cost]
    lam = 1e-6
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        res, z = pose_residuals(pose, points, pixels, intr)
        e2 = np.sum(res * res, axis=-1)
        front = z > 0
        w_r = weights * loss.weight(np.where(front, e2, np.inf)) * front
        J = pose_jacobian(pose, points, intr)
        g = 2.0 * np.einsum("n,nki,nk->i", w_r, J, res)
        if float(np.linalg.norm(g)) < gradient_tol:
            converged = True
            break
        H = 2.0 * np.einsum("n,nki,nkj->ij", w_r, J, J)
        diag = np.maximum(np.diag(H), 1e-12)
        accepted = False
        for _ in range(25):
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = apply_delta(pose, step)
            cand_cost = robust_cost(cand, points, pixels, weights, loss, intr)
            if cand_cost <= cost:
                accepted = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if not accepted:
            break
        lam = max(lam / 3.0, 1e-12)
        drop = cost - cand_cost
        pose, cost = cand, cand_cost
        trace.append(cost)
        if drop < cost_tol * max(cost, 1e-300):
            converged = True
            break
    return RefineResult(pose=pose, converged=converged, iterations=it, cost_trace=trace)
