"""Query-time orchestration: retrieval, 2D-3D lifting, pose estimation, metrics.

Lifting turns bidirectional dense matches into weighted 2D-3D
correspondences using the database entries' stored depth:

* database-to-query direction: each confident database cell looks its depth
  up directly (no interpolation) and unprojects through the database
  camera; the match target is the query pixel.
* query-to-database direction: the match target is a subpixel database
  position, so depth is bilinearly interpolated there; samples outside the
  valid domain or touching any invalid neighbor are dropped.

Both directions are concatenated without deduplication (duplicates are
harmless to MSAC scoring and refinement).  Matches are ordered by
(entry id, direction, row-major cell index) so the estimate depends only on
the match set and the RANSAC seed, not on retrieval order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .depthbuild import DepthMap
from .geometry import CameraIntrinsics, Pose, pose_error
from .matchio import CorrespondenceField, filter_matches_arrays
from .posest import Match2D3D, PoseEstimate, RansacConfig, ransac_pnp
from .retrieval import DescriptorIndex

__all__ = [
    "EvalResult",
    "EvalThresholds",
    "FieldPair",
    "QueryJob",
    "evaluate",
    "interp_depth",
    "interp_depth_many",
    "lift",
    "localize",
]

CONFIDENCE_THRESHOLD = 0.05


@dataclass(frozen=True)
class FieldPair:
    """Bidirectional dense matches between a query and one database entry."""

    query_to_db: CorrespondenceField
    db_to_query: CorrespondenceField


@dataclass
class QueryJob:
    """One query image: intrinsics, retrieval descriptor, and match fields."""

    query_id: str
    intrinsics: CameraIntrinsics
    descriptor: np.ndarray
    fields: dict[str, FieldPair]
    k_loc: int = 10


@dataclass(frozen=True)
class EvalThresholds:
    """(translation m, rotation deg) recall thresholds."""

    pairs: tuple[tuple[float, float], ...] = ((0.25, 2.0), (0.5, 5.0), (1.0, 10.0))

    def __post_init__(self):
        for t, r in self.pairs:
            if t <= 0 or r <= 0:
                raise ValueError(f"thresholds must be positive, got ({t}, {r})")

    @classmethod
    def parse(cls, text: str) -> "EvalThresholds":
        """Parse "0.25:2,0.5:5,1:10" into threshold pairs."""
        pairs = []
        for item in text.split(","):
            t, r = item.split(":")
            pairs.append((float(t), float(r)))
        return cls(tuple(pairs))


def interp_depth_many(depth: DepthMap, subpixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear depth at subpixel positions (depth-map pixel units).

    Returns (values (N,), valid (N,)).  A sample is valid only when it lies
    inside [0.5, W-0.5] x [0.5, H-0.5] and all four surrounding pixels are
    valid (the all-valid rule prevents depth bleeding across edges).
    """
    pts = np.asarray(subpixels, dtype=np.float64).reshape(-1, 2)
    h, w = depth.valid.shape
    x = pts[:, 0] - 0.5
    y = pts[:, 1] - 0.5
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    x0 = np.clip(np.floor(x), 0, w - 2).astype(np.int64)
    y0 = np.clip(np.floor(y), 0, h - 2).astype(np.int64)
    fx = np.clip(x - x0, 0.0, 1.0)
    fy = np.clip(y - y0, 0.0, 1.0)
    v00 = depth.valid[y0, x0]
    v10 = depth.valid[y0, x0 + 1]
    v01 = depth.valid[y0 + 1, x0]
    v11 = depth.valid[y0 + 1, x0 + 1]
    ok = inside & v00 & v10 & v01 & v11
    d = depth.values.astype(np.float64)
    vals = (
        d[y0, x0] * (1 - fx) * (1 - fy)
        + d[y0, x0 + 1] * fx * (1 - fy)
        + d[y0 + 1, x0] * (1 - fx) * fy
        + d[y0 + 1, x0 + 1] * fx * fy
    )
    return np.where(ok, vals, 0.0), ok


def interp_depth(depth: DepthMap, subpixel) -> float | None:
    """Scalar convenience wrapper over interp_depth_many."""
    vals, ok = interp_depth_many(depth, np.asarray(subpixel, dtype=np.float64)[None])
    return float(vals[0]) if ok[0] else None


def _check_grid_spans_image(fld: CorrespondenceField, intr: CameraIntrinsics, what: str) -> None:
    if abs(fld.grid_w * fld.scale_x - intr.width) > 1e-6 * intr.width or \
       abs(fld.grid_h * fld.scale_y - intr.height) > 1e-6 * intr.height:
        raise ValueError(
            f"{what}: field grid {fld.grid_w}x{fld.grid_h} at scale "
            f"({fld.scale_x}, {fld.scale_y}) does not span image "
            f"{intr.width}x{intr.height}"
        )


def lift(
    query_job: QueryJob,
    entry,
    depth: DepthMap,
    threshold: float = CONFIDENCE_THRESHOLD,
) -> list[Match2D3D]:
    """Lift one entry's bidirectional fields to weighted 2D-3D matches.

    ``depth`` is the entry's dequantized stored depth at match-grid
    resolution.  Output order: database-to-query matches first, then
    query-to-database, each in row-major cell order.
    """
    pair = query_job.fields[entry.id]
    intr_db: CameraIntrinsics = entry.intrinsics
    _check_grid_spans_image(pair.db_to_query, intr_db, f"entry {entry.id} db->query")
    _check_grid_spans_image(pair.query_to_db, query_job.intrinsics, f"entry {entry.id} query->db")
    if depth.intrinsics.width != intr_db.width or depth.intrinsics.height != intr_db.height:
        raise ValueError(
            f"entry {entry.id}: depth map covers {depth.intrinsics.width}x"
            f"{depth.intrinsics.height}, entry image is {intr_db.width}x{intr_db.height}"
        )
    R_db_t = entry.pose.R.T
    t_db = entry.pose.t
    dh, dw = depth.valid.shape
    sx_depth = dw / intr_db.width
    sy_depth = dh / intr_db.height
    out: list[Match2D3D] = []

    # Direction 1: database -> query (direct depth lookup at the db cell).
    src, tgt, conf, _ = filter_matches_arrays(pair.db_to_query, threshold)
    if src.shape[0]:
        ix = np.clip((src[:, 0] * sx_depth).astype(np.int64), 0, dw - 1)
        iy = np.clip((src[:, 1] * sy_depth).astype(np.int64), 0, dh - 1)
        ok = depth.valid[iy, ix]
        d = depth.values.astype(np.float64)[iy, ix]
        xc = np.stack(
            [
                (src[:, 0] - intr_db.cx) / intr_db.fx * d,
                (src[:, 1] - intr_db.cy) / intr_db.fy * d,
                d,
            ],
            axis=-1,
        )
        Xw = (xc - t_db) @ R_db_t.T
        for i in np.nonzero(ok)[0]:
            out.append(Match2D3D(tgt[i], Xw[i], float(conf[i]), entry.id))

    # Direction 2: query -> database (bilinear depth at the subpixel target).
    src, tgt, conf, _ = filter_matches_arrays(pair.query_to_db, threshold)
    if src.shape[0]:
        depth_px = tgt * np.array([sx_depth, sy_depth])
        d, ok = interp_depth_many(depth, depth_px)
        xc = np.stack(
            [
                (tgt[:, 0] - intr_db.cx) / intr_db.fx * d,
                (tgt[:, 1] - intr_db.cy) / intr_db.fy * d,
                d,
            ],
            axis=-1,
        )
        Xw = (xc - t_db) @ R_db_t.T
        for i in np.nonzero(ok)[0]:
            out.append(Match2D3D(src[i], Xw[i], float(conf[i]), entry.id))
    return out


def localize(
    query_job: QueryJob,
    vmap,
    cfg: RansacConfig,
    index: DescriptorIndex | None = None,
    depth_cache: dict[str, DepthMap] | None = None,
    confidence_threshold: float = CONFIDENCE_THRESHOLD,
) -> PoseEstimate:
    """Retrieve, lift, and estimate the query pose.

    ``vmap`` is a mapstore.Map (or anything with an ``entries`` list).
    Retrieved entries without provided fields are skipped.  A query with no
    lifted matches yields a failure estimate (``converged=False``).
    """
    from .mapstore import dequantize_depth

    if index is None:
        index = DescriptorIndex.from_entries((e.id, e.descriptor) for e in vmap.entries)
    if index.size == 0:
        return _failure_estimate(0)
    ranked = index.topk(np.asarray(query_job.descriptor, dtype=np.float64), query_job.k_loc)
    by_id = {e.id: e for e in vmap.entries}
    matches: list[Match2D3D] = []
    for eid in sorted(eid for eid, _ in ranked):  # id order decouples from rank order
        if eid not in query_job.fields:
            continue
        entry = by_id[eid]
        if depth_cache is not None and eid in depth_cache:
            depth = depth_cache[eid]
        else:
            if entry.qdepth is None:
                raise ValueError(f"entry {eid} has no stored depth")
            depth = dequantize_depth(entry.qdepth)
            if depth_cache is not None:
                depth_cache[eid] = depth
        matches.extend(lift(query_job, entry, depth, confidence_threshold))
    if len(matches) < 3:
        return _failure_estimate(len(matches))
    return ransac_pnp(matches, query_job.intrinsics, cfg)


def _failure_estimate(n_matches: int) -> PoseEstimate:
    return PoseEstimate(
        pose=Pose.identity(),
        inlier_count=0,
        inlier_flags=np.zeros(n_matches, dtype=bool),
        score=math.inf,
        iterations=0,
        converged=False,
    )


@dataclass
class EvalResult:
    thresholds: EvalThresholds
    recalls: list[float]
    median_rotation_deg: float
    median_translation_m: float
    num_queries: int
    num_failed: int
    errors: list[tuple[float, float]] = field(default_factory=list, repr=False)


def evaluate(
    estimates: list[tuple[PoseEstimate, Pose]], thresholds: EvalThresholds
) -> EvalResult:
    """Recall per threshold plus median errors over successful estimates.

    Failed estimates count against every threshold; medians use the
    lower-median convention and cover successful estimates only.
    """
    if not estimates:
        raise ValueError("evaluate needs at least one estimate")
    errors: list[tuple[float, float]] = []  # (trans m, rot deg); NaN for failures
    n_failed = 0
    for est, gt in estimates:
        if not est.converged:
            n_failed += 1
            errors.append((math.nan, math.nan))
            continue
        pe = pose_error(est.pose, gt)
        errors.append((pe.translation_error_m, pe.rotation_error_deg))
    recalls = []
    for t_m, r_deg in thresholds.pairs:
        hits = sum(
            1 for t, r in errors
            if not math.isnan(t) and t <= t_m and r <= r_deg
        )
        recalls.append(hits / len(errors))
    ok_t = sorted(t for t, _ in errors if not math.isnan(t))
    ok_r = sorted(r for _, r in errors if not math.isnan(r))
    if ok_t:
        med_t = ok_t[(len(ok_t) - 1) // 2]
        med_r = ok_r[(len(ok_r) - 1) // 2]
    else:
        med_t = math.nan
        med_r = math.nan
    return EvalResult(
        thresholds=thresholds,
        recalls=recalls,
        median_rotation_deg=med_r,
        median_translation_m=med_t,
        num_queries=len(errors),
        num_failed=n_failed,
        errors=errors,
    )
