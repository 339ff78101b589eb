"""Deterministic synthetic scenes: the ground-truth oracle for the pipeline.

Two scene flavors:

* ``"plane"`` — a bounded textured plane patch.  Depth at any subpixel is
  analytic, so oracle correspondence fields are exact to double precision;
  this is the flavor used wherever tests need 1e-9-grade agreement.
* ``"points"`` — a scattered 3D point set.  Fields are sparse (one cell per
  rasterized point) and source positions are grid-quantized, mirroring what
  sparse matchers emit.

Everything is a pure function of (spec, seed): identical seeds produce
bit-identical scenes, fields, and corruptions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose, project_points
from .matchio import CorrespondenceField

__all__ = [
    "NoiseSpec",
    "Scene",
    "SceneSpec",
    "corrupt",
    "make_queries",
    "make_scene",
    "oracle_field",
    "view_descriptor",
]


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic scene; the seed fully determines the output.

    Camera 0 is canonical (identity pose).  The remaining cameras sit at
    lateral offsets up to ``camera_spread``, are pushed back from the scene
    by up to ``camera_backoff`` (relative to the mean depth) so the whole
    reference frustum stays covisible, aim at the scene center (look-at),
    and roll about their optical axis by up to ``rotation_jitter_deg``.
    """

    num_cameras: int = 6
    width: int = 140
    height: int = 140
    kind: str = "plane"  # "plane" | "points"
    num_points: int = 500
    depth_min: float = 1.5
    depth_max: float = 3.0
    camera_spread: float = 0.25
    camera_backoff: float = 0.1
    rotation_jitter_deg: float = 4.0
    seed: int = 0
    intrinsics: CameraIntrinsics | None = None

    def __post_init__(self) -> None:
        if self.num_cameras < 2:
            raise ValueError(f"need at least 2 cameras, got {self.num_cameras}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"degenerate image size {self.width}x{self.height}")
        if not (0 < self.depth_min < self.depth_max):
            raise ValueError(f"bad depth range [{self.depth_min}, {self.depth_max}]")
        if self.kind not in ("plane", "points"):
            raise ValueError(f"unknown scene kind {self.kind!r}")

    def resolved_intrinsics(self) -> CameraIntrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        f = float(max(self.width, self.height))
        return CameraIntrinsics(f, f, self.width / 2.0, self.height / 2.0,
                                self.width, self.height)


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption model for correspondence fields."""

    sigma_px: float = 0.0
    outlier_fraction: float = 0.0
    inlier_conf_range: tuple[float, float] = (0.5, 1.0)
    outlier_conf_range: tuple[float, float] = (0.0, 0.3)

    def __post_init__(self) -> None:
        if self.sigma_px < 0:
            raise ValueError("sigma_px must be >= 0")
        if not 0 <= self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must be in [0, 1]")


@dataclass
class Scene:
    """Cameras plus world geometry with analytic ground truth."""

    spec: SceneSpec
    cameras: list[tuple[Pose, CameraIntrinsics]]
    plane_z: float | None = None
    plane_half_extent: tuple[float, float] | None = None
    points: np.ndarray | None = None  # (N, 3) world, points mode only

    def view_id(self, index: int) -> str:
        return f"cam{index:03d}"

    def gt_depth_at(self, view: int, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Analytic z-depth at subpixel positions (plane mode only).

        Returns (depth (N,), valid (N,)); valid requires a positive-depth hit
        inside the plane patch.
        """
        if self.plane_z is None:
            raise ValueError("gt_depth_at is only defined for plane scenes")
        pose, intr = self.cameras[view]
        px = np.asarray(pixels, dtype=np.float64)
        k = np.stack(
            [
                (px[..., 0] - intr.cx) / intr.fx,
                (px[..., 1] - intr.cy) / intr.fy,
                np.ones_like(px[..., 0]),
            ],
            axis=-1,
        )
        R = pose.R
        rt_t = R.T @ pose.t
        nk = k @ R[:, 2]  # n . (R^T k) with n = e_z is column 2 of R dotted with k
        with np.errstate(divide="ignore", invalid="ignore"):
            d = (self.plane_z + rt_t[2]) / nk
        Xw = (k * d[..., None] - pose.t) @ R  # R^T (Xc - t), batched
        ex, ey = self.plane_half_extent
        valid = (
            np.isfinite(d)
            & (d > 0)
            & (np.abs(Xw[..., 0]) <= ex)
            & (np.abs(Xw[..., 1]) <= ey)
        )
        return d, valid

    def grid_pixels(self, view: int, grid_w: int, grid_h: int) -> np.ndarray:
        """Cell-center pixels (grid_h, grid_w, 2) of a match grid over the view."""
        _, intr = self.cameras[view]
        sx = intr.width / grid_w
        sy = intr.height / grid_h
        cols, rows = np.meshgrid(np.arange(grid_w), np.arange(grid_h))
        return np.stack([(cols + 0.5) * sx, (rows + 0.5) * sy], axis=-1)

    def gt_depth_grid(self, view: int, grid_w: int | None = None,
                      grid_h: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Ground-truth depth sampled on a grid: (depth, valid), float64.

        Plane mode: analytic depth at every cell center.  Points mode: cells
        hit by a rasterized point (front-most point wins).
        """
        _, intr = self.cameras[view]
        grid_w = grid_w or intr.width
        grid_h = grid_h or intr.height
        if self.plane_z is not None:
            px = self.grid_pixels(view, grid_w, grid_h)
            d, valid = self.gt_depth_at(view, px.reshape(-1, 2))
            return d.reshape(grid_h, grid_w), valid.reshape(grid_h, grid_w)
        depth, valid, _ = self._rasterize_points(view, grid_w, grid_h)
        return depth, valid

    def _rasterize_points(self, view: int, grid_w: int, grid_h: int):
        """Points mode: per-cell (depth, valid, point index); nearest point wins."""
        pose, intr = self.cameras[view]
        px, in_front = project_points(intr, pose, self.points)
        z = pose.apply(self.points)[:, 2]
        sx = intr.width / grid_w
        sy = intr.height / grid_h
        depth = np.zeros((grid_h, grid_w), dtype=np.float64)
        valid = np.zeros((grid_h, grid_w), dtype=bool)
        idx = np.full((grid_h, grid_w), -1, dtype=np.int64)
        inside = in_front & (px[:, 0] >= 0) & (px[:, 0] < intr.width) \
            & (px[:, 1] >= 0) & (px[:, 1] < intr.height)
        for p in np.nonzero(inside)[0]:
            c = min(int(px[p, 0] / sx), grid_w - 1)
            r = min(int(px[p, 1] / sy), grid_h - 1)
            if not valid[r, c] or z[p] < depth[r, c]:
                depth[r, c] = z[p]
                valid[r, c] = True
                idx[r, c] = p
        return depth, valid, idx

    def rgb_image(self, view: int) -> np.ndarray:
        """Deterministic procedural texture (H, W, 3) uint8.

        Plane mode textures are a function of the world hit point, so views
        of the same surface patch agree; points mode gets a plain gradient.
        """
        pose, intr = self.cameras[view]
        w, h = intr.width, intr.height
        cols, rows = np.meshgrid(np.arange(w), np.arange(h))
        px = np.stack([cols + 0.5, rows + 0.5], axis=-1).reshape(-1, 2)
        if self.plane_z is not None:
            d, valid = self.gt_depth_at(view, px)
            k = np.stack(
                [(px[:, 0] - intr.cx) / intr.fx, (px[:, 1] - intr.cy) / intr.fy,
                 np.ones(len(px))], axis=-1)
            Xw = (k * d[:, None] - pose.t) @ pose.R
            u, v = Xw[:, 0], Xw[:, 1]
            r = 0.5 + 0.5 * np.sin(7.0 * u) * np.cos(5.0 * v)
            g = 0.5 + 0.5 * np.sin(3.0 * u + 2.0 * v)
            b = 0.5 + 0.5 * np.cos(4.0 * u - 3.0 * v)
            img = np.stack([r, g, b], axis=-1)
            img[~valid] = 0.1
        else:
            img = np.stack(
                [px[:, 0] / w, px[:, 1] / h, 0.5 * np.ones(len(px))], axis=-1)
        return (np.clip(img, 0, 1) * 255).round().astype(np.uint8).reshape(h, w, 3)


def _look_at_pose(center: np.ndarray, target: np.ndarray, roll_rad: float) -> Pose:
    """Camera-from-world pose whose optical axis points at ``target``."""
    fwd = target - center
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(up, fwd)) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    x_axis = np.cross(up, fwd)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(fwd, x_axis)
    R = np.stack([x_axis, y_axis, fwd])  # rows: camera axes in world coords
    cr, sr = np.cos(roll_rad), np.sin(roll_rad)
    roll = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    R = roll @ R
    return Pose.from_rt(R, -(R @ center))


def make_scene(spec: SceneSpec) -> Scene:
    """Generate cameras and world geometry; deterministic given spec.seed."""
    rng = np.random.default_rng(spec.seed)
    intr = spec.resolved_intrinsics()
    mid_depth = 0.5 * (spec.depth_min + spec.depth_max)
    target = np.array([0.0, 0.0, mid_depth])

    cameras: list[tuple[Pose, CameraIntrinsics]] = [(Pose.identity(), intr)]
    for _ in range(spec.num_cameras - 1):
        center = np.array(
            [
                rng.uniform(-spec.camera_spread, spec.camera_spread),
                rng.uniform(-spec.camera_spread, spec.camera_spread),
                -mid_depth * spec.camera_backoff * rng.uniform(0.3, 1.0),
            ]
        )
        roll = np.radians(rng.uniform(-spec.rotation_jitter_deg, spec.rotation_jitter_deg))
        cameras.append((_look_at_pose(center, target, roll), intr))

    if spec.kind == "plane":
        # Patch sized to cover the reference frustum at the plane with margin.
        half_w = intr.width / 2.0 / intr.fx * mid_depth
        half_h = intr.height / 2.0 / intr.fy * mid_depth
        margin = 0.1 * max(half_w, half_h)
        return Scene(
            spec=spec,
            cameras=cameras,
            plane_z=mid_depth,
            plane_half_extent=(half_w + margin, half_h + margin),
        )

    # Points mode: sample pixels in camera 0 and lift to random depths.
    n = spec.num_points
    px = np.stack(
        [rng.uniform(0, intr.width, n), rng.uniform(0, intr.height, n)], axis=-1
    )
    depths = rng.uniform(spec.depth_min, spec.depth_max, n)
    k = np.stack(
        [(px[:, 0] - intr.cx) / intr.fx, (px[:, 1] - intr.cy) / intr.fy, np.ones(n)],
        axis=-1,
    )
    points = k * depths[:, None]  # camera 0 is canonical, so camera == world frame
    return Scene(spec=spec, cameras=cameras, points=points)


def _resolve_view(scene: Scene, view) -> tuple[Pose, CameraIntrinsics, str]:
    if isinstance(view, int):
        pose, intr = scene.cameras[view]
        return pose, intr, scene.view_id(view)
    pose, intr, vid = view
    return pose, intr, vid


def oracle_field(
    scene: Scene, view_a, view_b, grid_w: int | None = None, grid_h: int | None = None
) -> CorrespondenceField:
    """Exact correspondence field from view_a to view_b.

    Views are scene camera indices or explicit ``(pose, intrinsics, id)``
    triples (used for query views).  Cells whose ray misses the geometry or
    whose target falls outside view_b get confidence 0.
    """
    pose_a, intr_a, id_a = _resolve_view(scene, view_a)
    pose_b, intr_b, id_b = _resolve_view(scene, view_b)
    grid_w = grid_w or intr_a.width
    grid_h = grid_h or intr_a.height
    sx = intr_a.width / grid_w
    sy = intr_a.height / grid_h
    cols, rows = np.meshgrid(np.arange(grid_w), np.arange(grid_h))
    px = np.stack([(cols + 0.5) * sx, (rows + 0.5) * sy], axis=-1).reshape(-1, 2)

    targets = np.full((grid_h * grid_w, 2), np.nan, dtype=np.float64)
    conf = np.zeros(grid_h * grid_w, dtype=np.float64)

    if scene.plane_z is not None:
        if not isinstance(view_a, int):
            d, valid = _plane_depth_for(scene, pose_a, intr_a, px)
        else:
            d, valid = scene.gt_depth_at(view_a, px)
        k = np.stack(
            [(px[:, 0] - intr_a.cx) / intr_a.fx, (px[:, 1] - intr_a.cy) / intr_a.fy,
             np.ones(len(px))], axis=-1)
        Xw = (k * d[:, None] - pose_a.t) @ pose_a.R
        tgt, front = project_points(intr_b, pose_b, Xw)
        inside = (
            valid & front
            & (tgt[:, 0] >= 0) & (tgt[:, 0] < intr_b.width)
            & (tgt[:, 1] >= 0) & (tgt[:, 1] < intr_b.height)
        )
        targets[inside] = tgt[inside]
        conf[inside] = 1.0
    else:
        if not isinstance(view_a, int):
            raise ValueError("points-mode oracle fields require scene camera indices")
        _, valid, idx = scene._rasterize_points(view_a, grid_w, grid_h)
        valid = valid.reshape(-1)
        idx = idx.reshape(-1)
        hit = np.nonzero(valid)[0]
        pts = scene.points[idx[hit]]
        tgt, front = project_points(intr_b, pose_b, pts)
        inside = (
            front
            & (tgt[:, 0] >= 0) & (tgt[:, 0] < intr_b.width)
            & (tgt[:, 1] >= 0) & (tgt[:, 1] < intr_b.height)
        )
        targets[hit[inside]] = tgt[inside]
        conf[hit[inside]] = 1.0

    return CorrespondenceField(
        source_id=id_a,
        target_id=id_b,
        targets=targets.reshape(grid_h, grid_w, 2),
        confidence=conf.reshape(grid_h, grid_w),
        scale_x=sx,
        scale_y=sy,
    )


def _plane_depth_for(scene: Scene, pose: Pose, intr: CameraIntrinsics, px: np.ndarray):
    """Plane depth for an arbitrary (non-scene) camera, e.g. a query view."""
    tmp = Scene(
        spec=scene.spec,
        cameras=[(pose, intr)],
        plane_z=scene.plane_z,
        plane_half_extent=scene.plane_half_extent,
    )
    return tmp.gt_depth_at(0, px)


def corrupt(field: CorrespondenceField, noise: NoiseSpec, seed: int) -> CorrespondenceField:
    """Corrupt a field: outliers resampled uniform-in-image, inliers get
    Gaussian pixel noise; confidences redrawn from the respective models.

    Invalid cells (confidence 0) stay untouched.  Outliers are drawn over
    the source image extent (grid * scale), i.e. same-size target images
    are assumed, which holds for all synthetic scenes.  Deterministic
    given the seed; with sigma 0 and no outliers the targets are unchanged.
    """
    rng = np.random.default_rng(seed)
    h, w = field.grid_h, field.grid_w
    n = h * w
    # Fixed draw order independent of cell content keeps determinism simple.
    is_outlier = rng.random(n) < noise.outlier_fraction
    gauss = rng.standard_normal((n, 2)) * noise.sigma_px
    img_w = w * field.scale_x
    img_h = h * field.scale_y
    uniform = rng.random((n, 2)) * np.array([img_w, img_h])
    lo_i, hi_i = noise.inlier_conf_range
    lo_o, hi_o = noise.outlier_conf_range
    conf_in = lo_i + (hi_i - lo_i) * rng.random(n)
    conf_out = lo_o + (hi_o - lo_o) * rng.random(n)

    targets = field.targets.reshape(n, 2).astype(np.float64)
    conf = field.confidence.reshape(n).astype(np.float64)
    valid = conf > 0
    out = valid & is_outlier
    inl = valid & ~is_outlier
    targets[inl] = targets[inl] + gauss[inl]
    targets[out] = uniform[out]
    conf[inl] = conf_in[inl]
    conf[out] = conf_out[out]
    return CorrespondenceField(
        source_id=field.source_id,
        target_id=field.target_id,
        targets=targets.reshape(h, w, 2),
        confidence=conf.reshape(h, w),
        scale_x=field.scale_x,
        scale_y=field.scale_y,
    )


def view_descriptor(pose: Pose, dim: int = 16) -> np.ndarray:
    """Deterministic global descriptor of a camera view.

    Built from the camera center and viewing direction so nearby, similarly
    oriented cameras score high cosine similarity; unit-normalized float32.
    """
    if dim < 8:
        raise ValueError("descriptor dim must be >= 8")
    c = pose.center()
    d = pose.R.T @ np.array([0.0, 0.0, 1.0])
    base = [c[0], c[1], c[2], 2 * d[0], 2 * d[1], 2 * d[2]]
    k = 1
    while len(base) < dim:
        base.append(0.3 * float(np.cos(k * c[0] + 2 * k * c[1] + 3 * k * c[2])))
        k += 1
    v = np.array(base[:dim], dtype=np.float64)
    v = v + 0.05  # keep away from the zero vector for degenerate poses
    return (v / np.linalg.norm(v)).astype(np.float32)


def make_queries(
    scene: Scene, num_queries: int, seed: int, spread_scale: float = 0.8
) -> list[tuple[Pose, CameraIntrinsics, str]]:
    """Query views sampled like scene cameras; deterministic given seed."""
    rng = np.random.default_rng(seed)
    spec = scene.spec
    intr = spec.resolved_intrinsics()
    mid_depth = 0.5 * (spec.depth_min + spec.depth_max)
    target = np.array([0.0, 0.0, mid_depth])
    out = []
    for i in range(num_queries):
        center = np.array(
            [
                rng.uniform(-spec.camera_spread, spec.camera_spread) * spread_scale,
                rng.uniform(-spec.camera_spread, spec.camera_spread) * spread_scale,
                -mid_depth * spec.camera_backoff * rng.uniform(0.0, 0.8),
            ]
        )
        roll = np.radians(rng.uniform(-spec.rotation_jitter_deg, spec.rotation_jitter_deg))
        out.append((_look_at_pose(center, target, roll), intr, f"query{i:03d}"))
    return out
