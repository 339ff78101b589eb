"""Minimal three-point absolute pose solver.

Given three world points and the unit bearings under which a calibrated
camera observes them, recovers up to four camera-from-world poses.

The solver works in distance space: with ``s_i`` the unknown distance from
the camera center to point ``i`` and pairwise bearing cosines
``cos_ab = f_a . f_b``, the law of cosines gives three quadrics

    s_a^2 + s_b^2 - 2 s_a s_b cos_ab = |P_a - P_b|^2 .

Substituting ``s2 = u s1, s3 = v s1`` and eliminating ``s1`` leaves two
monic quadratics in ``u`` with coefficients polynomial in ``v``; their
resultant is a quartic in ``v`` whose real positive roots seed candidate
distance triples.  Each candidate is polished by Newton iteration on the
three quadrics, converted to camera-frame points, and aligned to the world
points with the SVD-based orthogonal Procrustes solution.  Candidates whose
reprojected bearings deviate by more than ``BEARING_TOL`` radians are
discarded, so every returned pose satisfies the bearing constraints to
solver precision.
"""

from __future__ import annotations

import numpy as np

from .geometry import Pose, matrix_to_quat

__all__ = ["BEARING_TOL", "p3p_solve", "p3p_solve_batch"]

# Max angular residual (rad) a returned solution may leave on any bearing.
BEARING_TOL = 1e-8

_COLLINEAR_TOL = 1e-9
_DEDUP_TOL = 1e-6
_NEWTON_ITERS = 12


def p3p_solve(bearings: np.ndarray, world_points: np.ndarray) -> list[Pose]:
    """Solve the three-point pose problem.

    Args:
        bearings: (3, 3) unit rays in the camera frame, one row per point.
        world_points: (3, 3) corresponding world points, one row each.

    Returns:
        0 to 4 camera-from-world poses.  Degenerate input (collinear or
        coincident points, repeated bearings) yields an empty list.
    """
    R, t, sample = p3p_solve_batch(
        np.asarray(bearings, dtype=np.float64)[None],
        np.asarray(world_points, dtype=np.float64)[None],
    )
    return [Pose(matrix_to_quat(R[i]), t[i]) for i in range(R.shape[0])]


def p3p_solve_batch(
    bearings: np.ndarray, world_points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized solver over a batch of minimal samples.

    Args:
        bearings: (B, 3, 3) unit rays in the camera frame.
        world_points: (B, 3, 3) world points.

    Returns:
        (R, t, sample_index): rotations (M, 3, 3), translations (M, 3) and
        the originating batch index (M,) of every solution, ordered by
        sample index then by ascending quartic root.
    """
    f = np.asarray(bearings, dtype=np.float64)
    P = np.asarray(world_points, dtype=np.float64)
    B = f.shape[0]

    # Pairwise squared point distances and bearing cosines.
    # Naming: side a opposes the angle at the camera between rays 2 and 3, etc.
    a2 = np.sum((P[:, 1] - P[:, 2]) ** 2, axis=-1)
    b2 = np.sum((P[:, 0] - P[:, 2]) ** 2, axis=-1)
    c2 = np.sum((P[:, 0] - P[:, 1]) ** 2, axis=-1)
    cos_a = np.sum(f[:, 1] * f[:, 2], axis=-1)
    cos_b = np.sum(f[:, 0] * f[:, 2], axis=-1)
    cos_g = np.sum(f[:, 0] * f[:, 1], axis=-1)

    # Degeneracy: coincident points or collinear triangle.
    v1 = P[:, 1] - P[:, 0]
    v2 = P[:, 2] - P[:, 0]
    cross = np.cross(v1, v2)
    n1 = np.linalg.norm(v1, axis=-1)
    n2 = np.linalg.norm(v2, axis=-1)
    scale2 = np.maximum(np.maximum(a2, b2), c2)
    ok = (
        (scale2 > 0)
        & (np.minimum(np.minimum(a2, b2), c2) > 1e-24 * scale2)
        & (np.linalg.norm(cross, axis=-1) > _COLLINEAR_TOL * n1 * n2)
        & (np.abs(cos_a) < 1.0)
        & (np.abs(cos_b) < 1.0)
        & (np.abs(cos_g) < 1.0)
    )

    # Two monic quadratics in u with coefficients polynomial in v:
    #   u^2 + p1 u + q1(v) = 0   (from the b/c quadric pair)
    #   u^2 + p2(v) u + q2(v) = 0   (from the a/b quadric pair)
    # p1 = -2 cos_g
    # q1(v) = -(c2 (1 + v^2 - 2 v cos_b) - b2) / b2
    # p2(v) = -2 v cos_a
    # q2(v) = (b2 v^2 - a2 (1 + v^2 - 2 v cos_b)) / b2
    # Resultant: (q2-q1)^2 + p1 (q2-q1)(p1-p2) + q1 (p1-p2)^2 = 0, quartic in v.
    with np.errstate(divide="ignore", invalid="ignore"):
        rb = 1.0 / np.where(b2 > 0, b2, 1.0)
    # Polynomial coefficient rows, highest degree last: [v^0, v^1, v^2].
    q1c = np.stack([-(c2 - b2) * rb, -(-2.0 * c2 * cos_b) * rb, -c2 * rb], axis=-1)
    q2c = np.stack([-a2 * rb, 2.0 * a2 * cos_b * rb, (b2 - a2) * rb], axis=-1)
    d = q2c - q1c  # degree-2 coefficients of (q2 - q1)
    # (p1 - p2)(v) = p1 + 2 cos_a v  ->  degree-1: [p1, 2 cos_a]
    e0 = -2.0 * cos_g
    e1 = 2.0 * cos_a

    # Quartic coefficients (ascending powers of v) assembled by convolution.
    d0, d1, d2 = d[:, 0], d[:, 1], d[:, 2]
    q10, q11, q12 = q1c[:, 0], q1c[:, 1], q1c[:, 2]
    # (q2-q1)^2
    A0 = d0 * d0
    A1 = 2 * d0 * d1
    A2 = d1 * d1 + 2 * d0 * d2
    A3 = 2 * d1 * d2
    A4 = d2 * d2
    # p1 * (q2-q1) * (p1-p2): p1 is scalar e0 per sample
    B0 = e0 * (d0 * e0)
    B1 = e0 * (d0 * e1 + d1 * e0)
    B2 = e0 * (d1 * e1 + d2 * e0)
    B3 = e0 * (d2 * e1)
    # q1 * (p1-p2)^2, with (p1-p2)^2 = [e0^2, 2 e0 e1, e1^2]
    f0, f1_, f2_ = e0 * e0, 2 * e0 * e1, e1 * e1
    C0 = q10 * f0
    C1 = q10 * f1_ + q11 * f0
    C2 = q10 * f2_ + q11 * f1_ + q12 * f0
    C3 = q11 * f2_ + q12 * f1_
    C4 = q12 * f2_
    quartic = np.stack(
        [A4 + C4, A3 + B3 + C3, A2 + B2 + C2, A1 + B1 + C1, A0 + B0 + C0], axis=-1
    )  # np.roots order: highest degree first

    # Per-sample root extraction loop (np.roots handles degree collapse),
    # then one vectorized polish/alignment pass over all candidate triples.
    cand_idx: list[int] = []
    cand_s: list[tuple[float, float, float]] = []
    for i in range(B):
        if not ok[i]:
            continue
        coeffs = quartic[i]
        mx = np.max(np.abs(coeffs))
        if not np.isfinite(mx) or mx == 0:
            continue
        roots = np.roots(coeffs / mx)
        v_cands = sorted(
            float(r.real)
            for r in roots
            if abs(r.imag) <= 1e-6 * (1.0 + abs(r.real)) and r.real > 0
        )
        if not v_cands:
            continue
        for s in _distance_triples(
            v_cands, a2[i], b2[i], c2[i], cos_a[i], cos_b[i], cos_g[i]
        ):
            cand_idx.append(i)
            cand_s.append((s[0], s[1], s[2]))

    if not cand_idx:
        return np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)

    idx = np.array(cand_idx, dtype=np.int64)
    s_arr = np.array(cand_s, dtype=np.float64)
    R_all, t_all, valid = _poses_from_distances_batch(
        s_arr, f[idx], P[idx],
        a2[idx], b2[idx], c2[idx], cos_a[idx], cos_b[idx], cos_g[idx],
    )

    sols_R: list[np.ndarray] = []
    sols_t: list[np.ndarray] = []
    sols_idx: list[int] = []
    kept_for: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
    for c in range(idx.shape[0]):
        if not valid[c]:
            continue
        i = int(idx[c])
        kept = kept_for.setdefault(i, [])
        if len(kept) >= 4:
            continue
        R_c, t_c = R_all[c], t_all[c]
        if any(
            np.linalg.norm(R_c - Rk) < _DEDUP_TOL and
            np.linalg.norm(t_c - tk) < _DEDUP_TOL * np.sqrt(scale2[i])
            for Rk, tk in kept
        ):
            continue
        kept.append((R_c, t_c))
        sols_R.append(R_c)
        sols_t.append(t_c)
        sols_idx.append(i)

    if not sols_R:
        return np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    return np.stack(sols_R), np.stack(sols_t), np.array(sols_idx, dtype=np.int64)


def _distance_triples(v_cands, a2, b2, c2, cos_a, cos_b, cos_g):
    """Candidate (s1, s2, s3) triples from quartic roots in v = s3/s1."""
    out = []
    for v in v_cands:
        den_b = 1.0 + v * v - 2.0 * v * cos_b
        if den_b <= 0:
            continue
        s1 = np.sqrt(b2 / den_b)
        q1v = -((c2 * den_b - b2) / b2)
        q2v = (b2 * v * v - a2 * den_b) / b2
        p_diff = -2.0 * cos_g + 2.0 * v * cos_a  # p1 - p2
        if abs(p_diff) > 1e-10:
            u_list = [(q2v - q1v) / p_diff]
        else:
            # Resultant linear relation degenerates; fall back to both
            # branches of the first quadratic (spurious ones fail polish).
            disc = cos_g * cos_g - q1v
            if disc < 0:
                continue
            rt = np.sqrt(disc)
            u_list = [cos_g + rt, cos_g - rt]
        for u in u_list:
            if u <= 0:
                continue
            out.append(np.array([s1, u * s1, v * s1]))
    return out


def _poses_from_distances_batch(s, f, P, a2, b2, c2, cos_a, cos_b, cos_g):
    """Newton-polish distance triples, then orthogonal-Procrustes alignment.

    All arguments are stacked per candidate (C, ...).  Returns (R (C,3,3),
    t (C,3), valid (C,)); candidates failing to converge, going non-positive,
    or missing the bearing-residual contract are marked invalid.
    """
    C = s.shape[0]
    scale2 = np.maximum(np.maximum(a2, b2), c2)
    s = s.copy()
    valid = np.ones(C, dtype=bool)
    for _ in range(_NEWTON_ITERS):
        s1, s2, s3 = s[:, 0], s[:, 1], s[:, 2]
        r = np.stack(
            [
                s1 * s1 + s2 * s2 - 2 * s1 * s2 * cos_g - c2,
                s1 * s1 + s3 * s3 - 2 * s1 * s3 * cos_b - b2,
                s2 * s2 + s3 * s3 - 2 * s2 * s3 * cos_a - a2,
            ],
            axis=-1,
        )
        active = valid & (np.max(np.abs(r), axis=-1) >= 1e-14 * scale2)
        if not active.any():
            break
        z = np.zeros(C)
        J = np.stack(
            [
                np.stack([2 * s1 - 2 * s2 * cos_g, 2 * s2 - 2 * s1 * cos_g, z], -1),
                np.stack([2 * s1 - 2 * s3 * cos_b, z, 2 * s3 - 2 * s1 * cos_b], -1),
                np.stack([z, 2 * s2 - 2 * s3 * cos_a, 2 * s3 - 2 * s2 * cos_a], -1),
            ],
            axis=1,
        )
        det = np.linalg.det(J)
        solvable = active & (np.abs(det) > 1e-300) & np.isfinite(det)
        valid &= ~(active & ~solvable)
        if not solvable.any():
            break
        step = np.zeros_like(s)
        step[solvable] = np.linalg.solve(J[solvable], -r[solvable][..., None])[..., 0]
        s = s + step
        bad = solvable & (np.any(~np.isfinite(s), axis=-1) | np.any(s <= 0, axis=-1))
        valid &= ~bad
        s[~valid] = 1.0  # benign filler, keeps later algebra finite

    # Camera-frame points along the bearings, then R, t from Procrustes.
    Y = s[:, :, None] * f
    Pm = P.mean(axis=1)
    Ym = Y.mean(axis=1)
    Pc = P - Pm[:, None, :]
    Yc = Y - Ym[:, None, :]
    H = np.einsum("cni,cnj->cij", Pc, Yc)
    U, _, Vt = np.linalg.svd(H)
    det = np.linalg.det(np.einsum("cij,ckj->cik", Vt.transpose(0, 2, 1), U))
    D = np.zeros((C, 3, 3))
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = np.sign(det)
    R = np.einsum("cji,cjk,clk->cil", Vt, D, U)  # V D U^T per candidate
    t = Ym - np.einsum("cij,cj->ci", R, Pm)

    # Contract check: every solution must reproject onto its bearings.
    pred = np.einsum("cij,cnj->cni", R, P) + t[:, None, :]
    nrm = np.linalg.norm(pred, axis=-1)
    front = np.all(nrm > 0, axis=-1)
    nrm = np.where(nrm > 0, nrm, 1.0)
    pred = pred / nrm[..., None]
    ang = np.arctan2(
        np.linalg.norm(np.cross(pred, f), axis=-1),
        np.sum(pred * f, axis=-1),
    )
    valid &= front & (np.max(ang, axis=-1) <= BEARING_TOL)
    return R, t, valid
