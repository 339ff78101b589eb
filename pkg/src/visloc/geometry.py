"""Camera models, SE(3) poses, projection, and angular/pose error metrics.

Conventions used throughout the package:

* Poses are **camera-from-world**: ``X_cam = R @ X_world + t``.
* Quaternions are scalar-first ``(w, x, y, z)``, unit norm, canonicalized
  to ``w >= 0``.
* Image coordinates are continuous with the origin at the top-left image
  corner; the sample point of pixel ``(i, j)`` is ``(i + 0.5, j + 0.5)``.
* The pinhole model has zero distortion; images are assumed pre-undistorted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CameraIntrinsics",
    "Pose",
    "PoseError",
    "angular_error",
    "normalize",
    "pose_error",
    "project",
    "project_points",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_multiply",
    "rotvec_to_quat",
    "rotation_angle_deg",
    "unproject",
]

def normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v|| (last-axis norm for stacked vectors)."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    def bearing(self, pixel: np.ndarray) -> np.ndarray:
        """Unit ray through a (sub)pixel, in the camera frame."""
        px = np.asarray(pixel, dtype=np.float64)
        d = np.stack(
            [
                (px[..., 0] - self.cx) / self.fx,
                (px[..., 1] - self.cy) / self.fy,
                np.ones_like(px[..., 0]),
            ],
            axis=-1,
        )
        return normalize(d)


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to scalar-first unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def rotvec_to_quat(w: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to quaternion."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        # 2nd-order series keeps unit norm to machine precision near zero
        half = 0.5 * theta
        q = np.array([1.0 - half * half / 2.0, 0.5 * w[0], 0.5 * w[1], 0.5 * w[2]])
        return q / np.linalg.norm(q)
    axis = w / theta
    s = math.sin(0.5 * theta)
    return np.array([math.cos(0.5 * theta), axis[0] * s, axis[1] * s, axis[2] * s])


def rotation_angle_deg(q: np.ndarray) -> float:
    """Rotation angle of a unit quaternion, in degrees (stable near 0 and 180)."""
    return math.degrees(2.0 * math.atan2(np.linalg.norm(q[1:]), abs(q[0])))


@dataclass(frozen=True)
class Pose:
    """Camera-from-world rigid transform: ``X_cam = R @ X_world + t``.

    ``q`` is a unit scalar-first quaternion, normalized and canonicalized
    (w >= 0) at construction.
    """

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        if abs(n - 1.0) > 1e-12:  # leave already-unit quaternions bit-exact
            q = q / n
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> "Pose":
        return cls(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        q = quat_multiply(self.q, other.q)
        t = quat_to_matrix(self.q) @ other.t + self.t
        return Pose(q, t)

    def inverse(self) -> "Pose":
        q_inv = np.array([self.q[0], -self.q[1], -self.q[2], -self.q[3]])
        t_inv = -(quat_to_matrix(q_inv) @ self.t)
        return Pose(q_inv, t_inv)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform world points (..., 3) into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.t

    def center(self) -> np.ndarray:
        """Camera center in world coordinates: -R^T t."""
        return -(self.R.T @ self.t)


@dataclass(frozen=True)
class PoseError:
    rotation_error_deg: float
    translation_error_m: float


def project(intrinsics: CameraIntrinsics, pose: Pose, world_point: np.ndarray):
    """Project a world point; returns pixel (2,) or None if z <= 0.

    No image-bounds clipping is applied here.
    """
    xc = pose.apply(np.asarray(world_point, dtype=np.float64))
    if xc[2] <= 0:
        return None
    return np.array(
        [
            intrinsics.fx * xc[0] / xc[2] + intrinsics.cx,
            intrinsics.fy * xc[1] / xc[2] + intrinsics.cy,
        ]
    )


def project_points(
    intrinsics: CameraIntrinsics, pose: Pose, world_points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection: returns ((N, 2) pixels, (N,) in-front mask).

    Pixels for behind-camera points are NaN.
    """
    xc = pose.apply(world_points)
    z = xc[..., 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * xc[..., 0] / z + intrinsics.cx
        v = intrinsics.fy * xc[..., 1] / z + intrinsics.cy
    px = np.stack([u, v], axis=-1)
    px[~in_front] = np.nan
    return px, in_front


def unproject(intrinsics: CameraIntrinsics, pixel: np.ndarray, depth: float) -> np.ndarray:
    """Back-project a pixel at a given z-depth into the camera frame."""
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    px = np.asarray(pixel, dtype=np.float64)
    return np.array(
        [
            (px[0] - intrinsics.cx) / intrinsics.fx * depth,
            (px[1] - intrinsics.cy) / intrinsics.fy * depth,
            depth,
        ]
    )


def angular_error(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two rays in radians, in [0, pi]; atan2-based for stability."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.cross(a, b)
    return float(math.atan2(np.linalg.norm(cross), float(np.dot(a, b))))


def pose_error(estimated: Pose, ground_truth: Pose) -> PoseError:
    """Rotation angle of R_est R_gt^T (deg) and camera-center distance (m)."""
    q_rel = quat_multiply(estimated.q, np.array([ground_truth.q[0], *(-ground_truth.q[1:])]))
    rot_deg = rotation_angle_deg(q_rel)
    trans = float(np.linalg.norm(estimated.center() - ground_truth.center()))
    return PoseError(rot_deg, trans)
