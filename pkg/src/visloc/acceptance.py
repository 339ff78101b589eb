"""Acceptance checks: one callable per benchmark criterion.

Each check returns a CheckResult; ``run_all`` executes the suite.  Both the
pytest acceptance module and the ``synth-bench`` CLI consume these, so the
pass/fail logic lives in exactly one place.  Detail strings are
deterministic (no timings) so CLI output files are byte-reproducible;
wall-clock seconds are reported separately.
"""

from __future__ import annotations

import math
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .depthbuild import TriangulationConfig, build_depth_map
from .geometry import CameraIntrinsics, Pose, normalize, pose_error, rotvec_to_quat
from .localizer import EvalThresholds, evaluate, localize
from .mapbuild import synthetic_map, synthetic_query_jobs
from .mapstore import (
    MapEntry,
    dequantize_depth,
    encode_rgb,
    quantize_depth,
    read_map,
    reduce_map,
    write_map,
)
from .p3p import BEARING_TOL, p3p_solve
from .posest import RansacConfig, required_iterations
from .refine import CauchyLoss, apply_delta, pose_jacobian, pose_residuals, refine_pose
from .retrieval import DescriptorIndex
from .synth import NoiseSpec, SceneSpec, make_queries, make_scene, oracle_field

__all__ = ["CheckResult", "bench_scene_spec", "run_all"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def bench_scene_spec(seed: int, num_cameras: int = 6, image_size: int = 140,
                     camera_spread: float = 0.3) -> SceneSpec:
    """Standard benchmark scene: 90-degree FOV, look-at rig, plane surface."""
    f = image_size * 0.5
    intr = CameraIntrinsics(f, f, image_size / 2.0, image_size / 2.0,
                            image_size, image_size)
    return SceneSpec(
        num_cameras=num_cameras,
        width=image_size,
        height=image_size,
        camera_spread=camera_spread,
        camera_backoff=0.25,
        rotation_jitter_deg=3.0,
        seed=seed,
        intrinsics=intr,
    )


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------- criteria


def check_depth_quantization_bound(seed: int, quick: bool) -> CheckResult:
    n = 10**5 if quick else 10**6
    rng = np.random.default_rng(seed)

    def body():
        from .depthbuild import DepthMap

        d = np.exp(rng.uniform(math.log(0.25), math.log(128.0), n))
        side = int(math.sqrt(n))
        d = d[: side * side].reshape(side, side).astype(np.float32)
        intr = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, side, side)
        dm = DepthMap(values=d, valid=np.ones_like(d, dtype=bool), intrinsics=intr)
        q = quantize_depth(dm)
        back = dequantize_depth(q)
        return float(
            np.max(np.abs(back.values.astype(np.float64) - d.astype(np.float64))
                   / d.astype(np.float64))
        )

    max_rel, secs = _timed(body)
    passed = max_rel < 0.014 and secs < 5.0
    return CheckResult(
        "depth_quantization_bound", passed,
        f"max_rel_err={max_rel:.6f} (bound 0.014, expected ~0.012356)", secs,
    )


def check_p3p_exactness(seed: int, quick: bool) -> CheckResult:
    n_inst = 200 if quick else 1000
    rng = np.random.default_rng(seed)

    def body():
        hits = 0
        worst_bearing = 0.0
        for _ in range(n_inst):
            w = rng.normal(size=3)
            w = w / np.linalg.norm(w) * rng.uniform(0.0, 0.9 * math.pi)
            gt = Pose(rotvec_to_quat(w), rng.normal(size=3))
            xc = np.stack([rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3),
                           rng.uniform(1.0, 5.0, 3)], axis=-1)
            xw = (xc - gt.t) @ gt.R
            bearings = normalize(xc)
            sols = p3p_solve(bearings, xw)
            found = False
            for sol in sols:
                pe = pose_error(sol, gt)
                if (pe.rotation_error_deg < math.degrees(1e-6)
                        and pe.translation_error_m < 1e-6):
                    found = True
                pred = normalize(sol.apply(xw))
                ang = np.arctan2(
                    np.linalg.norm(np.cross(pred, bearings), axis=-1),
                    np.sum(pred * bearings, axis=-1),
                )
                worst_bearing = max(worst_bearing, float(ang.max()))
            hits += found
        return hits, worst_bearing

    (hits, worst_bearing), secs = _timed(body)
    passed = hits == n_inst and worst_bearing < BEARING_TOL and secs < 5.0
    return CheckResult(
        "p3p_exactness", passed,
        f"recovered {hits}/{n_inst}, worst bearing residual {worst_bearing:.2e} rad",
        secs,
    )


def _triangulate_scene(scene, grid: int, cfg: TriangulationConfig,
                       noise: NoiseSpec | None, noise_seed: int):
    from types import SimpleNamespace

    from .synth import corrupt

    n = len(scene.cameras)
    entry = SimpleNamespace(id=scene.view_id(0), pose=scene.cameras[0][0],
                            intrinsics=scene.cameras[0][1])
    covis = [SimpleNamespace(id=scene.view_id(i), pose=scene.cameras[i][0],
                             intrinsics=scene.cameras[i][1]) for i in range(1, n)]
    fields = [oracle_field(scene, 0, i, grid, grid) for i in range(1, n)]
    if noise is not None:
        fields = [corrupt(f, noise, noise_seed + i) for i, f in enumerate(fields)]
    dm = build_depth_map(entry, covis, fields, cfg)
    gt_d, _ = scene.gt_depth_grid(0, grid, grid)
    rel = np.abs(dm.values[dm.valid].astype(np.float64) - gt_d[dm.valid]) / gt_d[dm.valid]
    return float(dm.valid.mean()), (float(rel.max()) if rel.size else 0.0)


def check_triangulation_oracle(seed: int, quick: bool) -> CheckResult:
    grid = 60 if quick else 140
    scene = make_scene(bench_scene_spec(seed, num_cameras=6))
    (valid, max_rel), secs = _timed(
        lambda: _triangulate_scene(scene, grid, TriangulationConfig(), None, 0)
    )
    passed = valid >= 0.99 and max_rel < 1e-6 and secs < 60.0
    return CheckResult(
        "triangulation_oracle", passed,
        f"valid={valid:.4f} (need >=0.99), max_rel_err={max_rel:.2e} (need <1e-6)",
        secs,
    )


def check_triangulation_corrupted(seed: int, quick: bool) -> CheckResult:
    # These thresholds are statistically unattainable: with the
    # >=4-matched-inlier keep rule the valid fraction is binomially capped at
    # P(Binom(8, 0.6) >= 4) = 0.826 < 0.95, and uniform outliers landing
    # inside the 2-degree angular window contaminate the fixed refinement
    # inlier set at ~0.3% of pixels, each pulling the refined depth far
    # beyond 1e-6 relative regardless of geometry.  The check runs the
    # scenario faithfully and reports the honest numbers.
    grid = 60 if quick else 140
    scene = make_scene(bench_scene_spec(seed, num_cameras=9, camera_spread=0.45))
    noise = NoiseSpec(sigma_px=0.0, outlier_fraction=0.4)
    (res, secs) = _timed(
        lambda: _triangulate_scene(scene, grid, TriangulationConfig(), noise, seed + 17)
    )
    valid, max_rel = res
    passed = valid >= 0.95 and max_rel < 1e-6 and secs < 60.0
    return CheckResult(
        "triangulation_corrupted", passed,
        f"valid={valid:.4f} (need >=0.95, binomial cap 0.826), "
        f"max_rel_err={max_rel:.2e} (need <1e-6, outlier-contaminated)", secs,
    )


def _bench_pipeline(seed: int, quick: bool, n_queries: int, noise: NoiseSpec | None,
                    reproj_threshold: float = 12.0):
    grid = 30 if quick else 36
    scene = make_scene(bench_scene_spec(seed))
    vmap, reports = synthetic_map(scene, grid, TriangulationConfig())
    raw_depth = {r.entry_id: r.depth for r in reports}
    queries = make_queries(scene, n_queries, seed + 1000)
    jobs = synthetic_query_jobs(scene, queries, grid, k_loc=10, noise=noise,
                                noise_seed=seed + 2000)
    index = DescriptorIndex.from_entries((e.id, e.descriptor) for e in vmap.entries)
    return scene, vmap, raw_depth, jobs, index, reproj_threshold


def check_e2e_noise_free(seed: int, quick: bool, reproj_threshold: float,
                         max_iterations: int = 100_000) -> CheckResult:
    n_q = 10 if quick else 50

    def body():
        scene, vmap, raw_depth, jobs, index, tau = _bench_pipeline(
            seed, quick, n_q, None, reproj_threshold
        )
        worst_r = worst_t = 0.0
        hits = 0
        for qi, (job, gt) in enumerate(jobs):
            cfg = RansacConfig(reproj_threshold=tau, seed=seed + 3000 + qi,
                               max_iterations=max_iterations)
            est = localize(job, vmap, cfg, index=index, depth_cache=dict(raw_depth))
            pe = pose_error(est.pose, gt)
            worst_r = max(worst_r, pe.rotation_error_deg)
            worst_t = max(worst_t, pe.translation_error_m)
            hits += est.converged and pe.rotation_error_deg < 1e-4 \
                and pe.translation_error_m < 1e-4
        return hits, worst_r, worst_t

    (hits, worst_r, worst_t), secs = _timed(body)
    passed = hits == n_q and secs < 60.0
    return CheckResult(
        "e2e_noise_free", passed,
        f"{hits}/{n_q} within (1e-4 m, 1e-4 deg); worst rot={worst_r:.2e} deg, "
        f"trans={worst_t:.2e} m", secs,
    )


def check_e2e_robust(seed: int, quick: bool, reproj_threshold: float,
                     max_iterations: int = 100_000) -> CheckResult:
    n_q = 10 if quick else 50
    noise = NoiseSpec(sigma_px=1.0, outlier_fraction=0.3)

    def body():
        scene, vmap, raw_depth, jobs, index, tau = _bench_pipeline(
            seed, quick, n_q, noise, reproj_threshold
        )
        mean_depth = 0.5 * (scene.spec.depth_min + scene.spec.depth_max)
        t_budget = 0.02 * mean_depth
        hits = 0
        worst_r = worst_t = 0.0
        cache: dict = {}
        first_estimates = []
        for qi, (job, gt) in enumerate(jobs):
            cfg = RansacConfig(reproj_threshold=tau, seed=seed + 4000 + qi,
                               max_iterations=max_iterations)
            est = localize(job, vmap, cfg, index=index, depth_cache=cache)
            pe = pose_error(est.pose, gt)
            worst_r = max(worst_r, pe.rotation_error_deg)
            worst_t = max(worst_t, pe.translation_error_m)
            hits += est.converged and pe.rotation_error_deg <= 0.5 \
                and pe.translation_error_m <= t_budget
            if qi == 0:
                first_estimates.append(est)
        # determinism per seed: repeated run of the first query is bit-identical
        job0, _ = jobs[0]
        cfg0 = RansacConfig(reproj_threshold=tau, seed=seed + 4000,
                            max_iterations=max_iterations)
        re_est = localize(job0, vmap, cfg0, index=index, depth_cache=cache)
        det = (
            np.array_equal(re_est.pose.q, first_estimates[0].pose.q)
            and np.array_equal(re_est.pose.t, first_estimates[0].pose.t)
            and re_est.score == first_estimates[0].score
        )
        return hits, worst_r, worst_t, t_budget, det

    (hits, worst_r, worst_t, t_budget, det), secs = _timed(body)
    passed = hits / n_q >= 0.98 and det
    return CheckResult(
        "e2e_robust", passed,
        f"{hits}/{n_q} within (0.5 deg, {t_budget:.3f} m); worst rot={worst_r:.3f}, "
        f"trans={worst_t:.4f}; deterministic={det}", secs,
    )


def check_adaptive_stopping(seed: int, quick: bool) -> CheckResult:
    def body():
        return required_iterations(0.5, 1e-4, 3), required_iterations(0.1, 1e-4, 3)

    (a, b), secs = _timed(body)
    passed = a == 69 and b == 9206
    return CheckResult(
        "adaptive_stopping", passed,
        f"required_iterations(0.5)={a} (expect 69), (0.1)={b} (expect 9206)", secs,
    )


def check_refinement_jacobian(seed: int, quick: bool) -> CheckResult:
    n_states = 30 if quick else 100
    rng = np.random.default_rng(seed)
    intr = CameraIntrinsics(500.0, 480.0, 320.0, 240.0, 640, 480)

    def body():
        worst = 0.0
        for _ in range(n_states):
            pose = Pose(rotvec_to_quat(rng.normal(size=3) * 0.4), rng.normal(size=3) * 0.3)
            n_pts = 24
            xc = np.stack([rng.uniform(-1, 1, n_pts), rng.uniform(-1, 1, n_pts),
                           rng.uniform(2.0, 6.0, n_pts)], axis=-1)
            xw = (xc - pose.t) @ pose.R
            px = np.stack([
                intr.fx * xc[:, 0] / xc[:, 2] + intr.cx,
                intr.fy * xc[:, 1] / xc[:, 2] + intr.cy,
            ], axis=-1) + rng.normal(0, 2.0, (n_pts, 2))
            J = pose_jacobian(pose, xw, intr)
            h = 1e-6
            J_fd = np.zeros_like(J)
            for k in range(6):
                delta = np.zeros(6)
                delta[k] = h
                rp, _ = pose_residuals(apply_delta(pose, delta), xw, px, intr)
                rm, _ = pose_residuals(apply_delta(pose, -delta), xw, px, intr)
                J_fd[:, :, k] = (rp - rm) / (2 * h)
            worst = max(worst, float(np.abs(J - J_fd).max() / (np.abs(J_fd).max() + 1e-300)))
        # cost monotonicity on a robust refinement run
        pose = Pose(rotvec_to_quat(np.array([0.1, -0.05, 0.2])), np.array([0.1, 0.0, 0.2]))
        n_pts = 300
        xc = np.stack([rng.uniform(-1, 1, n_pts), rng.uniform(-1, 1, n_pts),
                       rng.uniform(2.0, 6.0, n_pts)], axis=-1)
        xw = (xc - pose.t) @ pose.R
        px = np.stack([
            intr.fx * xc[:, 0] / xc[:, 2] + intr.cx,
            intr.fy * xc[:, 1] / xc[:, 2] + intr.cy,
        ], axis=-1) + rng.normal(0, 1.0, (n_pts, 2))
        start = apply_delta(pose, np.array([0.01, -0.01, 0.02, 0.05, -0.03, 0.02]))
        res = refine_pose(start, xw, px, np.ones(n_pts), CauchyLoss(12.0), intr)
        monotone = all(b <= a + 1e-12 * max(abs(a), 1.0)
                       for a, b in zip(res.cost_trace, res.cost_trace[1:]))
        return worst, monotone

    (worst, monotone), secs = _timed(body)
    passed = worst < 1e-4 and monotone
    return CheckResult(
        "refinement_jacobian", passed,
        f"max FD relative error {worst:.2e} (need <1e-4); cost monotone={monotone}",
        secs,
    )


def check_storage_roundtrip(seed: int, quick: bool) -> CheckResult:
    n_maps = 5 if quick else 20
    rng = np.random.default_rng(seed)

    def body():
        from .depthbuild import DepthMap

        for m in range(n_maps):
            n_entries = int(rng.integers(2, 6))
            entries = []
            for e in range(n_entries):
                w_img, h_img = int(rng.integers(8, 24)), int(rng.integers(8, 24))
                intr = CameraIntrinsics(
                    float(rng.uniform(20, 200)), float(rng.uniform(20, 200)),
                    float(rng.uniform(0, w_img - 1)), float(rng.uniform(0, h_img - 1)),
                    w_img, h_img,
                )
                pose = Pose(rotvec_to_quat(rng.normal(size=3)), rng.normal(size=3) * 5)
                vals = rng.uniform(0.3, 100.0, (h_img, w_img)).astype(np.float32)
                valid = rng.random((h_img, w_img)) > 0.2
                dm = DepthMap(values=np.where(valid, vals, 0).astype(np.float32),
                              valid=valid, intrinsics=intr)
                rgb = (rng.random((h_img, w_img, 3)) * 255).astype(np.uint8)
                entries.append(MapEntry(
                    id=f"im{m:02d}_{e:02d}", pose=pose, intrinsics=intr,
                    rgb_payload=encode_rgb(rgb, "png"), rgb_codec="png",
                    qdepth=quantize_depth(dm),
                    descriptor=rng.normal(size=16).astype(np.float16),
                ))
            with tempfile.TemporaryDirectory() as td:
                write_map(entries, td)
                back = read_map(td)
                for a, b in zip(entries, back.entries):
                    if not (np.array_equal(a.pose.q, b.pose.q)
                            and np.array_equal(a.pose.t, b.pose.t)):
                        return False, f"pose mismatch in map {m} entry {a.id}"
                    if not np.array_equal(a.qdepth.codes, b.qdepth.codes):
                        return False, f"code mismatch in map {m} entry {a.id}"
                    if a.intrinsics != b.intrinsics:
                        return False, f"intrinsics mismatch in map {m} entry {a.id}"
        return True, f"{n_maps} randomized maps round-tripped exactly"

    (ok, detail), secs = _timed(body)
    return CheckResult("storage_roundtrip", ok, detail, secs)


def check_retrieval_exactness(seed: int, quick: bool) -> CheckResult:
    n_vecs = 2000 if quick else 10_000
    n_queries = 30 if quick else 100
    rng = np.random.default_rng(seed)

    def body():
        dim = 32
        index = DescriptorIndex(dim)
        stored = {}
        for i in range(n_vecs):
            vid = f"v{i:05d}"
            if i % 50 == 7 and i > 0:
                vec = next(iter(stored.values())).copy()  # exact tie case
            else:
                vec = rng.normal(size=dim).astype(np.float32)
            index.add(vid, vec)
            v64 = vec.astype(np.float64)
            stored[vid] = (v64 / np.linalg.norm(v64)).astype(np.float32)
        ids = sorted(stored)
        mat = np.stack([stored[i].astype(np.float64) for i in ids])
        for q in range(n_queries):
            qv = rng.normal(size=dim)
            k = int(rng.integers(1, 40))
            got = index.topk(qv, k)
            sims = mat @ (qv / np.linalg.norm(qv))
            oracle = sorted(zip(ids, sims), key=lambda p: (-p[1], p[0]))[:k]
            if [g[0] for g in got] != [o[0] for o in oracle]:
                return False, f"query {q} disagrees with brute force"
            if not all(abs(g[1] - o[1]) < 1e-12 for g, o in zip(got, oracle)):
                return False, f"query {q} similarity mismatch"
        return True, f"{n_queries} queries over {n_vecs} descriptors match brute force"

    (ok, detail), secs = _timed(body)
    return CheckResult("retrieval_exactness", ok, detail, secs)


def check_sweep_sanity(seed: int, quick: bool, reproj_threshold: float) -> CheckResult:
    n_q = 6 if quick else 20
    grid = 30 if quick else 36
    noise = NoiseSpec(sigma_px=0.5, outlier_fraction=0.1)

    def body():
        scene = make_scene(bench_scene_spec(seed))
        thresholds = EvalThresholds()
        queries = make_queries(scene, n_q, seed + 1000)
        jobs = synthetic_query_jobs(scene, queries, grid, k_loc=10, noise=noise,
                                    noise_seed=seed + 2000)

        def run_jobs(vmap):
            index = DescriptorIndex.from_entries((e.id, e.descriptor) for e in vmap.entries)
            cache: dict = {}
            pairs = []
            for qi, (job, gt) in enumerate(jobs):
                cfg = RansacConfig(reproj_threshold=reproj_threshold, seed=seed + 5000 + qi)
                pairs.append((localize(job, vmap, cfg, index=index, depth_cache=cache), gt))
            return evaluate(pairs, thresholds)

        map8, _ = synthetic_map(scene, grid, TriangulationConfig(), levels=255)
        map9, _ = synthetic_map(scene, grid, TriangulationConfig(), levels=511)
        base = run_jobs(map8)
        identity = run_jobs(reduce_map(map8, 1, 1.0, 90, 1, 8))
        ident_ok = (
            base.recalls == identity.recalls
            and base.median_translation_m == identity.median_translation_m
            and base.median_rotation_deg == identity.median_rotation_deg
        )
        res9 = run_jobs(map9)
        gap = res9.recalls[0] - base.recalls[0]
        return ident_ok, gap, base.recalls[0], res9.recalls[0]

    (ident_ok, gap, r8, r9), secs = _timed(body)
    passed = ident_ok and gap <= 0.02
    return CheckResult(
        "compression_sweep_sanity", passed,
        f"identity_reduction_exact={ident_ok}; recall@finest 8bit={r8:.3f} "
        f"9bit={r9:.3f} gap={gap:.3f} (need <=0.02)", secs,
    )


def check_cli_determinism(seed: int, quick: bool) -> CheckResult:
    def body():
        env_base = dict(os.environ)
        with tempfile.TemporaryDirectory() as td:
            root = Path(td)
            export = root / "scene"
            module = [sys.executable, "-m", "visloc.cli"]

            def run(cmd, threads, check=True):
                env = dict(env_base)
                env["OMP_NUM_THREADS"] = str(threads)
                env["OPENBLAS_NUM_THREADS"] = str(threads)
                proc = subprocess.run(
                    module + cmd, capture_output=True, text=True, env=env,
                )
                if check and proc.returncode != 0:
                    raise RuntimeError(
                        f"{' '.join(cmd)} failed ({proc.returncode}): {proc.stderr[:400]}"
                    )
                return proc

            run(["synth-bench", "--quick", "--seed", str(seed),
                 "--skip", ",".join(ALL_CHECK_NAMES),
                 "--export-dir", str(export), "--cameras", "6",
                 "--image-size", "64", "--grid", "20", "--queries", "3"], 1)

            def dir_bytes(d: Path) -> dict[str, bytes]:
                return {str(p.relative_to(d)): p.read_bytes()
                        for p in sorted(d.rglob("*")) if p.is_file()}

            outs = {}
            for threads in (1, 2):
                for rep in range(2 if threads == 1 else 1):
                    tag = f"t{threads}r{rep}"
                    mdir = root / f"map_{tag}"
                    run(["build-map", "--input", str(export / "mapping"),
                         "--out", str(mdir), "--depth-min", "1", "--depth-max", "4"],
                        threads)
                    res = root / f"res_{tag}.jsonl"
                    run(["localize", "--map", str(mdir), "--queries",
                         str(export / "queries"), "--out", str(res), "--seed", "7"],
                        threads)
                    csv = root / f"eval_{tag}.csv"
                    run(["eval", "--results", str(res), "--gt",
                         str(export / "gt_poses.json"), "--csv", str(csv)], threads)
                    sweep = root / f"sweep_{tag}.csv"
                    run(["compress-sweep", "--map", str(mdir), "--queries",
                         str(export / "queries"), "--gt", str(export / "gt_poses.json"),
                         "--out", str(sweep), "--seed", "7",
                         "--depth-bits", "8,7"], threads)
                    bench = root / f"bench_{tag}.csv"
                    run(["synth-bench", "--quick", "--seed", "3", "--out", str(bench),
                         "--skip", ",".join(n for n in ALL_CHECK_NAMES
                                            if n != "adaptive_stopping")], threads)
                    outs[tag] = {
                        "map": dir_bytes(mdir),
                        "res": res.read_bytes(),
                        "eval": csv.read_bytes(),
                        "sweep": sweep.read_bytes(),
                        "bench": bench.read_bytes(),
                    }
            ref = outs["t1r0"]
            if b'"status": "ok"' not in ref["res"]:
                return False, "localization failed; determinism check would be vacuous"
            for tag in ("t1r1", "t2r0"):
                if outs[tag] != ref:
                    diffs = [k for k in ref if outs[tag][k] != ref[k]]
                    return False, f"outputs differ for {tag}: {diffs}"
        return True, "build-map/localize/eval/compress-sweep/synth-bench byte-identical " \
                     "across reruns and thread counts"

    (ok, detail), secs = _timed(body)
    return CheckResult("cli_determinism", ok, detail, secs)


ALL_CHECK_NAMES = [
    "depth_quantization_bound",
    "p3p_exactness",
    "triangulation_oracle",
    "triangulation_corrupted",
    "e2e_noise_free",
    "e2e_robust",
    "adaptive_stopping",
    "refinement_jacobian",
    "storage_roundtrip",
    "retrieval_exactness",
    "compression_sweep_sanity",
    "cli_determinism",
]


def run_all(seed: int = 0, quick: bool = False, reproj_threshold: float = 12.0,
            skip: set[str] | None = None, max_iterations: int = 100_000) -> list[CheckResult]:
    skip = skip or set()
    runners = {
        "depth_quantization_bound": lambda: check_depth_quantization_bound(seed, quick),
        "p3p_exactness": lambda: check_p3p_exactness(seed, quick),
        "triangulation_oracle": lambda: check_triangulation_oracle(seed, quick),
        "triangulation_corrupted": lambda: check_triangulation_corrupted(seed, quick),
        "e2e_noise_free": lambda: check_e2e_noise_free(seed, quick, reproj_threshold,
                                                       max_iterations),
        "e2e_robust": lambda: check_e2e_robust(seed, quick, reproj_threshold,
                                               max_iterations),
        "adaptive_stopping": lambda: check_adaptive_stopping(seed, quick),
        "refinement_jacobian": lambda: check_refinement_jacobian(seed, quick),
        "storage_roundtrip": lambda: check_storage_roundtrip(seed, quick),
        "retrieval_exactness": lambda: check_retrieval_exactness(seed, quick),
        "compression_sweep_sanity": lambda: check_sweep_sanity(seed, quick, reproj_threshold),
        "cli_determinism": lambda: check_cli_determinism(seed, quick),
    }
    return [runners[name]() for name in ALL_CHECK_NAMES if name not in skip]
