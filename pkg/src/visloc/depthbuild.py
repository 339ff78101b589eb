"""Per-pixel depth triangulation from dense matches against covisible views.

Poses are known, so each match against a covisible image constrains a single
degree of freedom: the depth along the reference pixel's ray.  Every match
proposes a hypothesis (closest point on the reference ray to the match's
back-projected ray); hypotheses are scored by counting observations whose
angular error falls below a threshold; the winner's depth is then refined by
minimizing the confidence-weighted sum of squared angular errors over its
inlier set, which stays fixed during refinement.

Angular errors compare the observed bearing with the bearing predicted by
the hypothesized 3D point, both expressed in the observing camera's frame
(equivalently computed in world coordinates, since rotation preserves
angles).

``triangulate_pixel`` is the scalar reference implementation;
``build_depth_map`` runs the same math vectorized over all grid cells and is
deterministic regardless of internal chunking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import CameraIntrinsics, Pose
from .matchio import CorrespondenceField

__all__ = [
    "DepthMap",
    "Observation",
    "TriangulationConfig",
    "build_depth_map",
    "depth_hypothesis",
    "select_covisible",
    "triangulate_pixel",
]

_PARALLEL_TOL = 1e-12


@dataclass
class DepthMap:
    """Metric per-pixel z-depth (float32) with validity, at match-grid resolution.

    Values are z-depth in the camera frame (what ``geometry.unproject``
    consumes), not distance along the viewing ray.  ``width``/``height`` are
    the grid dimensions; ``intrinsics`` describe the full-resolution image the
    grid covers, so grid pixel (col, row) sits at image coordinates
    ``((col+0.5) * W/width, (row+0.5) * H/height)``.
    """

    values: np.ndarray
    valid: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.valid = np.ascontiguousarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape or self.values.ndim != 2:
            raise ValueError(
                f"values {self.values.shape} and valid {self.valid.shape} must be equal 2-D shapes"
            )
        bad = self.valid & ~(np.isfinite(self.values) & (self.values > 0))
        if np.any(bad):
            raise ValueError("valid pixels must hold positive finite depth")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TriangulationConfig:
    angular_threshold_rad: float = math.radians(2.0)
    min_inliers: int = 4  # "more than 3"
    confidence_threshold: float = 0.05
    k_map: int = 50
    max_refine_iters: int = 20
    refine_tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.angular_threshold_rad <= 0:
            raise ValueError("angular threshold must be positive")
        if self.min_inliers < 1:
            raise ValueError("min_inliers must be >= 1")


class Observation(NamedTuple):
    """A match against one covisible posed image."""

    pose: Pose
    intrinsics: CameraIntrinsics
    target_px: np.ndarray
    confidence: float


def depth_hypothesis(
    ref_ray: np.ndarray, ref_center: np.ndarray, obs: Observation
) -> float | None:
    """Depth along the reference ray closest to the observation's ray.

    Returns None when the rays are parallel (within 1e-12 of zero parallax)
    or the closest point lies behind the reference camera.
    """
    r = np.asarray(ref_ray, dtype=np.float64)
    c_ref = np.asarray(ref_center, dtype=np.float64)
    b_cam = obs.intrinsics.bearing(np.asarray(obs.target_px, dtype=np.float64))
    b = obs.pose.R.T @ b_cam
    c_obs = obs.pose.center()
    w = c_obs - c_ref
    beta = float(np.dot(r, b))
    denom = 1.0 - beta * beta
    if denom < _PARALLEL_TOL:
        return None
    d = (float(np.dot(w, r)) - beta * float(np.dot(w, b))) / denom
    if d <= 0:
        return None
    return d


def _angular_errors(point: np.ndarray, centers: np.ndarray, bearings: np.ndarray) -> np.ndarray:
    pred = point - centers
    cross = np.cross(pred, bearings)
    dots = np.sum(pred * bearings, axis=-1)
    return np.arctan2(np.linalg.norm(cross, axis=-1), dots)


def triangulate_pixel(
    ref_ray: np.ndarray,
    ref_center: np.ndarray,
    observations: Sequence[Observation],
    cfg: TriangulationConfig,
) -> tuple[float, int] | None:
    """Robust 1-DoF triangulation of a single pixel.

    Observations are assumed confidence-filtered already.  Returns
    (refined depth, inlier count of the winning hypothesis) or None when no
    hypothesis reaches ``cfg.min_inliers``.
    """
    if not observations:
        return None
    r = np.asarray(ref_ray, dtype=np.float64)
    c_ref = np.asarray(ref_center, dtype=np.float64)
    centers = np.stack([o.pose.center() for o in observations])
    bearings = np.stack(
        [o.pose.R.T @ o.intrinsics.bearing(np.asarray(o.target_px, float)) for o in observations]
    )
    weights = np.array([o.confidence for o in observations], dtype=np.float64)

    hypotheses = [depth_hypothesis(r, c_ref, o) for o in observations]

    best_d = None
    best_count = 0
    best_inliers = None
    for d in hypotheses:
        if d is None:
            continue
        ang = _angular_errors(c_ref + d * r, centers, bearings)
        inliers = ang < cfg.angular_threshold_rad
        count = int(inliers.sum())
        if count > best_count:  # strict: ties keep the earlier hypothesis
            best_count = count
            best_d = d
            best_inliers = inliers
    if best_d is None or best_count < cfg.min_inliers:
        return None

    d = _refine_depth_scalar(best_d, r, c_ref, centers[best_inliers],
                             bearings[best_inliers], weights[best_inliers], cfg)
    return d, best_count


def _weighted_cost(d, r, c_ref, centers, bearings, weights):
    ang = _angular_errors(c_ref + d * r, centers, bearings)
    return float(np.sum(weights * ang * ang))


def _cost_gradient(d, r, c_ref, centers, bearings, weights):
    pred = (c_ref + d * r) - centers
    cross = np.cross(pred, bearings)
    s = np.linalg.norm(cross, axis=-1)
    c = np.sum(pred * bearings, axis=-1)
    theta = np.arctan2(s, c)
    rb = np.cross(np.broadcast_to(r, bearings.shape), bearings)
    s_prime = np.where(s > 1e-300, np.sum(cross * rb, axis=-1) / np.where(s > 0, s, 1.0), 0.0)
    c_prime = bearings @ r
    theta_prime = (s_prime * c - s * c_prime) / (s * s + c * c)
    return float(np.sum(2.0 * weights * theta * theta_prime))


def _refine_depth_scalar(d0, r, c_ref, centers, bearings, weights, cfg):
    """Damped Newton on the weighted squared angular error; cost never increases."""
    d = float(d0)
    cost = _weighted_cost(d, r, c_ref, centers, bearings, weights)
    for _ in range(cfg.max_refine_iters):
        g = _cost_gradient(d, r, c_ref, centers, bearings, weights)
        h_step = max(1e-7 * abs(d), 1e-10)
        g_plus = _cost_gradient(d + h_step, r, c_ref, centers, bearings, weights)
        g_minus = _cost_gradient(d - h_step, r, c_ref, centers, bearings, weights)
        hess = (g_plus - g_minus) / (2.0 * h_step)
        if hess > 0 and np.isfinite(hess):
            step = -g / hess
        else:
            step = -math.copysign(0.05 * abs(d), g)
        accepted = False
        for _ in range(30):
            cand = d + step
            if cand > 0:
                cand_cost = _weighted_cost(cand, r, c_ref, centers, bearings, weights)
                if cand_cost <= cost:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        converged = abs(step) < cfg.refine_tol * max(abs(d), 1e-300)
        d, cost = cand, cand_cost
        if converged:
            break
    return d


def select_covisible(entry, vmap, k_map: int) -> list:
    """Top-``k_map`` map entries by descriptor similarity, excluding ``entry``.

    ``vmap`` is any object with an ``entries`` list of items carrying
    ``id``/``descriptor``; ordering matches ``retrieval.DescriptorIndex.topk``.
    """
    from .retrieval import DescriptorIndex

    index = DescriptorIndex.from_entries(
        (e.id, e.descriptor) for e in vmap.entries if e.id != entry.id
    )
    if index.size == 0:
        return []
    ranked = index.topk(np.asarray(entry.descriptor, dtype=np.float64), k_map)
    by_id = {e.id: e for e in vmap.entries}
    return [by_id[eid] for eid, _ in ranked]


def build_depth_map(
    entry,
    covisible_entries: Sequence,
    fields: Sequence[CorrespondenceField],
    cfg: TriangulationConfig,
    chunk_pixels: int = 4096,
) -> DepthMap:
    """Triangulate a full depth map for ``entry`` at the match-grid resolution.

    ``fields[i]`` must map from ``entry`` to ``covisible_entries[i]``.  The
    computation is vectorized over grid cells in fixed-size chunks; outputs
    are identical for any chunk size.
    """
    if len(fields) != len(covisible_entries):
        raise ValueError(
            f"{len(fields)} fields for {len(covisible_entries)} covisible entries"
        )
    if not fields:
        raise ValueError("need at least one correspondence field")
    intr = entry.intrinsics
    grid_h, grid_w = fields[0].grid_h, fields[0].grid_w
    for fld, cov in zip(fields, covisible_entries):
        if fld.source_id != entry.id or fld.target_id != cov.id:
            raise ValueError(
                f"field {fld.source_id}->{fld.target_id} does not pair "
                f"{entry.id}->{cov.id}"
            )
        if (fld.grid_h, fld.grid_w) != (grid_h, grid_w):
            raise ValueError("all fields must share one grid resolution")
        if abs(fld.grid_w * fld.scale_x - intr.width) > 1e-6 * intr.width or \
           abs(fld.grid_h * fld.scale_y - intr.height) > 1e-6 * intr.height:
            raise ValueError(
                f"field grid for {entry.id} does not span the image "
                f"({fld.grid_w}x{fld.grid_h} at scale {fld.scale_x}x{fld.scale_y})"
            )

    n_view = len(fields)
    n_pix = grid_h * grid_w

    # Per-view constants.
    centers = np.stack([c.pose.center() for c in covisible_entries])  # (V, 3)
    rot_t = np.stack([c.pose.R.T for c in covisible_entries])  # (V, 3, 3)
    intr_arr = np.array(
        [[c.intrinsics.fx, c.intrinsics.fy, c.intrinsics.cx, c.intrinsics.cy]
         for c in covisible_entries]
    )

    # Per-pixel observation data.
    conf = np.stack([f.confidence.reshape(-1).astype(np.float64) for f in fields], axis=1)
    tgt = np.stack([f.targets.reshape(-1, 2).astype(np.float64) for f in fields], axis=1)
    obs_ok = (conf >= cfg.confidence_threshold) & (conf > 0)

    # Observation bearings in world frame (NaN targets only at filtered cells).
    with np.errstate(invalid="ignore"):
        bx = (tgt[..., 0] - intr_arr[:, 2]) / intr_arr[:, 0]
        by = (tgt[..., 1] - intr_arr[:, 3]) / intr_arr[:, 1]
        b_cam = np.stack([bx, by, np.ones_like(bx)], axis=-1)
        b_cam /= np.linalg.norm(b_cam, axis=-1, keepdims=True)
        bearings = np.einsum("vij,pvj->pvi", rot_t, b_cam)
    bearings = np.where(obs_ok[..., None], bearings, 0.0)

    # Reference rays through cell centers, in world frame.
    sx = intr.width / grid_w
    sy = intr.height / grid_h
    cols, rows = np.meshgrid(np.arange(grid_w), np.arange(grid_h))
    u = (cols + 0.5).reshape(-1) * sx
    v = (rows + 0.5).reshape(-1) * sy
    k = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(n_pix)], axis=-1)
    k_norm = np.linalg.norm(k, axis=-1)
    k /= k_norm[:, None]
    ref_R_t = entry.pose.R.T
    rays = k @ ref_R_t.T  # (R^T k) for each pixel
    c_ref = entry.pose.center()

    # Depth hypotheses: closest point on the reference ray per observation.
    w_vec = centers - c_ref  # (V, 3)
    A = rays @ w_vec.T  # (P, V)
    beta = np.einsum("pvd,pd->pv", bearings, rays)
    Bw = np.einsum("pvd,vd->pv", bearings, w_vec)
    denom = 1.0 - beta * beta
    with np.errstate(divide="ignore", invalid="ignore"):
        D = (A - beta * Bw) / denom
    hyp_ok = obs_ok & (denom >= _PARALLEL_TOL) & np.isfinite(D) & (D > 0)

    depth_out = np.zeros(n_pix, dtype=np.float64)
    valid_out = np.zeros(n_pix, dtype=bool)

    thr = cfg.angular_threshold_rad
    for start in range(0, n_pix, chunk_pixels):
        sl = slice(start, min(start + chunk_pixels, n_pix))
        D_c = D[sl]
        hyp_c = hyp_ok[sl]
        if not hyp_c.any():
            continue
        rays_c = rays[sl]
        bear_c = bearings[sl]
        obs_c = obs_ok[sl]
        conf_c = conf[sl]
        p = D_c.shape[0]

        X = c_ref + D_c[..., None] * rays_c[:, None, :]  # (p, Vh, 3)
        pred = X[:, :, None, :] - centers[None, None, :, :]  # (p, Vh, Vo, 3)
        cross = np.cross(pred, bear_c[:, None, :, :])
        dots = np.sum(pred * bear_c[:, None, :, :], axis=-1)
        ang = np.arctan2(np.linalg.norm(cross, axis=-1), dots)
        inl = (ang < thr) & obs_c[:, None, :] & hyp_c[:, :, None]
        counts = inl.sum(axis=-1)  # (p, Vh)
        best_j = np.argmax(counts, axis=1)  # first max: lowest hypothesis index
        rows_p = np.arange(p)
        n_best = counts[rows_p, best_j]
        keep = n_best >= cfg.min_inliers
        if not keep.any():
            continue
        inlier_mask = inl[rows_p, best_j, :] & keep[:, None]
        d0 = np.where(keep, D_c[rows_p, best_j], 1.0)  # benign filler off-mask
        weights = np.where(inlier_mask, conf_c, 0.0)
        d_ref = _refine_depth_vec(
            d0, rays_c, c_ref, centers, bear_c, weights, keep, cfg
        )
        # Triangulation yields distance along the unit ray; the stored map
        # holds z-depth (the convention unproject/interp_depth expect).
        depth_out[sl][keep] = d_ref[keep] / k_norm[sl][keep]
        valid_out[sl][keep] = True

    values = np.where(valid_out, depth_out, 0.0).astype(np.float32).reshape(grid_h, grid_w)
    return DepthMap(values=values, valid=valid_out.reshape(grid_h, grid_w), intrinsics=intr)


def _vec_cost(d, rays, c_ref, centers, bearings, weights):
    X = c_ref + d[:, None] * rays
    pred = X[:, None, :] - centers[None, :, :]
    cross = np.cross(pred, bearings)
    dots = np.sum(pred * bearings, axis=-1)
    ang = np.arctan2(np.linalg.norm(cross, axis=-1), dots)
    return np.sum(weights * ang * ang, axis=-1)


def _vec_gradient(d, rays, c_ref, centers, bearings, weights):
    pred = (c_ref + d[:, None] * rays)[:, None, :] - centers[None, :, :]
    cross = np.cross(pred, bearings)
    s = np.linalg.norm(cross, axis=-1)
    c = np.sum(pred * bearings, axis=-1)
    theta = np.arctan2(s, c)
    rb = np.cross(rays[:, None, :], bearings)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_prime = np.where(s > 0, np.sum(cross * rb, axis=-1) / np.where(s > 0, s, 1.0), 0.0)
        c_prime = np.sum(bearings * rays[:, None, :], axis=-1)
        norm2 = s * s + c * c
        theta_prime = np.where(
            norm2 > 0, (s_prime * c - s * c_prime) / np.where(norm2 > 0, norm2, 1.0), 0.0
        )
    return np.sum(2.0 * weights * theta * theta_prime, axis=-1)


def _refine_depth_vec(d0, rays, c_ref, centers, bearings, weights, active0, cfg):
    """Vectorized damped Newton matching ``_refine_depth_scalar``."""
    d = d0.astype(np.float64).copy()
    active = active0.copy()
    cost = _vec_cost(d, rays, c_ref, centers, bearings, weights)
    for _ in range(cfg.max_refine_iters):
        if not active.any():
            break
        g = _vec_gradient(d, rays, c_ref, centers, bearings, weights)
        h_step = np.maximum(1e-7 * np.abs(d), 1e-10)
        g_plus = _vec_gradient(d + h_step, rays, c_ref, centers, bearings, weights)
        g_minus = _vec_gradient(d - h_step, rays, c_ref, centers, bearings, weights)
        hess = (g_plus - g_minus) / (2.0 * h_step)
        newton_ok = (hess > 0) & np.isfinite(hess) & np.isfinite(g)
        step = np.where(
            newton_ok, -g / np.where(newton_ok, hess, 1.0),
            -np.sign(g) * 0.05 * np.abs(d),
        )
        step = np.where(active, step, 0.0)
        accepted = np.zeros_like(active)
        cand_cost = cost.copy()
        for _ in range(30):
            trying = active & ~accepted
            if not trying.any():
                break
            cand = d + step
            pos = cand > 0
            cc = _vec_cost(np.where(pos, cand, d), rays, c_ref, centers, bearings, weights)
            good = trying & pos & (cc <= cost)
            cand_cost = np.where(good, cc, cand_cost)
            accepted |= good
            step = np.where(trying & ~good, step * 0.5, step)
        # Monotonicity invariant: an accepted step never increases the cost.
        assert np.all(cand_cost[accepted] <= cost[accepted])
        converged = accepted & (np.abs(step) < cfg.refine_tol * np.maximum(np.abs(d), 1e-300))
        d = np.where(accepted, d + step, d)
        cost = np.where(accepted, cand_cost, cost)
        active &= accepted & ~converged
    return d
