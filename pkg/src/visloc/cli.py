"""Operator surface: map building, localization, evaluation, sweeps, benchmarks.

Subcommands:

* ``build-map``      posed images + correspondence fields -> map directory
* ``localize``       map + query fields/descriptors -> line-delimited JSON
* ``eval``           results + ground-truth poses -> metrics (text + CSV)
* ``compress-sweep`` reduction grid -> per-setting size/accuracy CSV
* ``synth-bench``    synthetic benchmark + acceptance checks (exit 0 iff pass)

File conventions (documented in README): a build-map input directory is a
map directory without ``depth/`` plus a ``fields/`` directory holding
``<source>__<target>.imlc`` files; a query directory holds ``queries.json``,
``query_descriptors.bin`` (IMLD), and ``fields/`` with both match directions
per (query, entry) pair.

All randomness derives from one ``--seed``, fanned out per task as
``seed XOR sha256(task_name)[:8]`` so each sweep row and each query is
independently reproducible.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import tempfile
from pathlib import Path

import numpy as np

from .depthbuild import TriangulationConfig
from .geometry import CameraIntrinsics, Pose
from .localizer import (
    EvalThresholds,
    FieldPair,
    QueryJob,
    evaluate,
    localize,
)
from .mapstore import (
    DEFAULT_D_MAX,
    DEFAULT_D_MIN,
    Map,
    MapReadError,
    map_stats,
    read_descriptors,
    read_map,
    reduce_map,
    write_map,
)
from .matchio import read_field, write_field
from .posest import RansacConfig
from .retrieval import DescriptorIndex

__all__ = ["main", "derive_seed"]

CSV_VERSION = "visloc-csv v1"


def derive_seed(base_seed: int, task_name: str) -> int:
    digest = hashlib.sha256(task_name.encode("utf-8")).digest()
    return (base_seed ^ int.from_bytes(digest[:8], "little")) & 0x7FFFFFFFFFFFFFFF


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def _pose_json(pose: Pose) -> dict:
    return {"q": [_fmt17(v) for v in pose.q], "t": [_fmt17(v) for v in pose.t]}


def _pose_from_json(rec: dict) -> Pose:
    return Pose(np.array([float(v) for v in rec["q"]]),
                np.array([float(v) for v in rec["t"]]))


def _intrinsics_from_json(rec: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        float(rec["fx"]), float(rec["fy"]), float(rec["cx"]), float(rec["cy"]),
        int(rec["width"]), int(rec["height"]),
    )


def _intrinsics_json(i: CameraIntrinsics) -> dict:
    return {"fx": _fmt17(i.fx), "fy": _fmt17(i.fy), "cx": _fmt17(i.cx),
            "cy": _fmt17(i.cy), "width": i.width, "height": i.height}


def _error_record(code: int, message: str) -> int:
    print(json.dumps({"error": message}, sort_keys=True), file=sys.stderr)
    return code


# ---------------------------------------------------------------- build-map


def cmd_build_map(args: argparse.Namespace) -> int:
    try:
        posed = read_map(args.input, require_depth=False)
    except MapReadError as exc:
        return _error_record(2, f"cannot read input: {exc}")
    fields_dir = Path(args.fields) if args.fields else Path(args.input) / "fields"
    cfg = TriangulationConfig(
        angular_threshold_rad=math.radians(args.angular_threshold_deg),
        min_inliers=args.min_inliers,
        confidence_threshold=args.confidence_threshold,
        k_map=args.k_map,
    )

    def lookup(src, tgt):
        path = fields_dir / f"{src.id}__{tgt.id}.imlc"
        if not path.is_file():
            raise FileNotFoundError(f"missing field file for pair {src.id}->{tgt.id}: {path}")
        fld = read_field(path)
        if fld.source_id != src.id or fld.target_id != tgt.id:
            raise ValueError(
                f"field file {path} declares {fld.source_id}->{fld.target_id}"
            )
        return fld

    from .mapbuild import build_map_from_fields

    try:
        vmap, reports = build_map_from_fields(
            posed.entries, lookup, cfg, d_min=args.depth_min, d_max=args.depth_max
        )
    except (FileNotFoundError, ValueError) as exc:
        return _error_record(2, str(exc))
    write_map(vmap, args.out)
    for rep in reports:
        print(f"{rep.entry_id} valid_depth_fraction={rep.valid_fraction:.6f} "
              f"covisible={rep.num_covisible}")
    return 0


# ----------------------------------------------------------------- localize


def _load_query_jobs(queries_dir: Path, vmap: Map, k_loc: int) -> list[QueryJob]:
    meta = json.loads((queries_dir / "queries.json").read_text(encoding="utf-8"))
    descs = read_descriptors(queries_dir / "query_descriptors.bin")
    if len(meta["queries"]) != descs.shape[0]:
        raise MapReadError(
            f"{len(meta['queries'])} queries but {descs.shape[0]} descriptors"
        )
    fields_dir = queries_dir / "fields"
    jobs = []
    for qi, rec in enumerate(meta["queries"]):
        qid = rec["id"]
        fields = {}
        for entry in vmap.entries:
            fwd = fields_dir / f"{qid}__{entry.id}.imlc"
            bwd = fields_dir / f"{entry.id}__{qid}.imlc"
            if fwd.is_file() and bwd.is_file():
                fields[entry.id] = FieldPair(
                    query_to_db=read_field(fwd), db_to_query=read_field(bwd)
                )
        jobs.append(
            QueryJob(
                query_id=qid,
                intrinsics=_intrinsics_from_json(rec["intrinsics"]),
                descriptor=descs[qi].astype(np.float32),
                fields=fields,
                k_loc=k_loc,
            )
        )
    return jobs


def _run_localization(vmap: Map, jobs: list[QueryJob], args) -> list[dict]:
    index = DescriptorIndex.from_entries((e.id, e.descriptor) for e in vmap.entries)
    depth_cache: dict = {}
    records = []
    for job in jobs:
        cfg = RansacConfig(
            max_iterations=args.max_iterations,
            reproj_threshold=args.reproj_threshold,
            seed=derive_seed(args.seed, f"localize/{job.query_id}"),
        )
        est = localize(job, vmap, cfg, index=index, depth_cache=depth_cache)
        rec = {
            "query_id": job.query_id,
            "status": "ok" if est.converged else "failed",
            "pose": _pose_json(est.pose) if est.converged else None,
            "inliers": int(est.inlier_count),
            "matches": int(est.inlier_flags.shape[0]),
            "score": float(est.score) if math.isfinite(est.score) else None,
            "iterations": int(est.iterations),
        }
        records.append(rec)
    return records


def cmd_localize(args: argparse.Namespace) -> int:
    try:
        vmap = read_map(args.map)
    except MapReadError as exc:
        return _error_record(2, f"cannot read map: {exc}")
    try:
        jobs = _load_query_jobs(Path(args.queries), vmap, args.k_loc)
    except (MapReadError, FileNotFoundError, KeyError) as exc:
        return _error_record(2, f"cannot read queries: {exc}")
    records = _run_localization(vmap, jobs, args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    n_ok = sum(1 for r in records if r["status"] == "ok")
    print(f"localized {n_ok}/{len(records)} queries -> {out}")
    return 0


# --------------------------------------------------------------------- eval


def _load_results(path) -> dict[str, dict]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out[rec["query_id"]] = rec
    return out


def _load_gt_poses(path) -> dict[str, Pose]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {qid: _pose_from_json(rec) for qid, rec in data["poses"].items()}


def _metrics_from_records(records: dict[str, dict], gt: dict[str, Pose],
                          thresholds: EvalThresholds):
    from .posest import PoseEstimate

    missing = sorted(set(gt) - set(records)) + sorted(set(records) - set(gt))
    if missing:
        raise KeyError(f"query ids do not match between results and ground truth: {missing}")
    pairs = []
    for qid in sorted(records):
        rec = records[qid]
        if rec["status"] == "ok":
            est = PoseEstimate(
                pose=_pose_from_json(rec["pose"]),
                inlier_count=rec["inliers"],
                inlier_flags=np.zeros(0, dtype=bool),
                score=rec["score"] if rec["score"] is not None else math.inf,
                iterations=rec["iterations"],
                converged=True,
            )
        else:
            est = PoseEstimate(
                pose=Pose.identity(), inlier_count=0,
                inlier_flags=np.zeros(0, dtype=bool), score=math.inf,
                iterations=rec["iterations"], converged=False,
            )
        pairs.append((est, gt[qid]))
    return evaluate(pairs, thresholds)


def _metrics_csv(result, name: str) -> str:
    lines = [f"# {CSV_VERSION} {name}", "threshold_t_m,threshold_r_deg,recall"]
    for (t_m, r_deg), rec in zip(result.thresholds.pairs, result.recalls):
        lines.append(f"{t_m!r},{r_deg!r},{rec!r}")
    lines.append(f"median_translation_m,,{result.median_translation_m!r}")
    lines.append(f"median_rotation_deg,,{result.median_rotation_deg!r}")
    return "\n".join(lines) + "\n"


def cmd_eval(args: argparse.Namespace) -> int:
    thresholds = EvalThresholds.parse(args.thresholds)
    try:
        records = _load_results(args.results)
        gt = _load_gt_poses(args.gt)
        result = _metrics_from_records(records, gt, thresholds)
    except KeyError as exc:
        return _error_record(2, str(exc))
    for (t_m, r_deg), rec in zip(thresholds.pairs, result.recalls):
        print(f"recall@({t_m}m, {r_deg}deg) = {rec:.4f}")
    print(f"median translation error = {result.median_translation_m:.6g} m")
    print(f"median rotation error = {result.median_rotation_deg:.6g} deg")
    print(f"failed = {result.num_failed}/{result.num_queries}")
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text(_metrics_csv(result, "eval"), encoding="utf-8")
    return 0


# ----------------------------------------------------------- compress-sweep


def cmd_compress_sweep(args: argparse.Namespace) -> int:
    try:
        vmap = read_map(args.map)
    except MapReadError as exc:
        return _error_record(2, f"cannot read map: {exc}")
    gt = _load_gt_poses(args.gt)
    thresholds = EvalThresholds.parse(args.thresholds)
    strides = [int(x) for x in args.keyframe_strides.split(",")]
    rgb_factors = [float(x) for x in args.rgb_factors.split(",")]
    rgb_qualities = [int(x) for x in args.rgb_qualities.split(",")]
    depth_factors = [int(x) for x in args.depth_factors.split(",")]
    depth_bits = [int(x) for x in args.depth_bits.split(",")]

    rows = []
    header = (
        "keyframe_stride,rgb_factor,rgb_quality,depth_factor,depth_bits,"
        "map_bytes,rgb_bytes,depth_bytes,descriptor_bytes,"
        + ",".join(f"recall_{t}m_{r}deg" for t, r in thresholds.pairs)
        + ",median_translation_m,median_rotation_deg,failed"
    )
    for stride in strides:
        for rf in rgb_factors:
            for rq in rgb_qualities:
                for df in depth_factors:
                    for bits in depth_bits:
                        row = _sweep_row(
                            vmap, gt, thresholds, args, stride, rf, rq, df, bits
                        )
                        rows.append(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        f"# {CSV_VERSION} compress-sweep\n" + header + "\n" + "".join(r + "\n" for r in rows),
        encoding="utf-8",
    )
    print(f"wrote {len(rows)} sweep rows -> {out}")
    return 0


def _sweep_row(vmap, gt, thresholds, args, stride, rf, rq, df, bits) -> str:
    tag = f"k{stride}_rf{rf}_rq{rq}_df{df}_b{bits}"
    try:
        reduced = reduce_map(vmap, stride, rf, rq, df, bits)
        with tempfile.TemporaryDirectory() as td:
            write_map(reduced, td)
            st = map_stats(td)
            reread = read_map(td)
            jobs = _load_query_jobs(Path(args.queries), reread, args.k_loc)
            records = {r["query_id"]: r for r in _run_localization(reread, jobs, args)}
        result = _metrics_from_records(records, gt, thresholds)
    except Exception as exc:  # per-setting failures stay in-band
        return f"{stride},{rf!r},{rq},{df},{bits},error: {exc},,,," + "," * (
            len(thresholds.pairs) + 2
        )
    cells = [
        str(stride), repr(rf), str(rq), str(df), str(bits),
        str(st.total_bytes), str(st.rgb_bytes), str(st.depth_bytes),
        str(st.descriptor_bytes),
    ]
    cells += [repr(r) for r in result.recalls]
    cells += [repr(result.median_translation_m), repr(result.median_rotation_deg),
              str(result.num_failed)]
    return ",".join(cells)


# -------------------------------------------------------------- synth-bench


def export_scene_inputs(scene, queries, grid: int, out_dir: Path) -> None:
    """Serialize a synthetic scene as build-map/localize inputs."""
    from .mapbuild import synthetic_posed_entries
    from .synth import oracle_field, view_descriptor

    mapping = out_dir / "mapping"
    posed = synthetic_posed_entries(scene)
    write_map(posed, mapping)
    fdir = mapping / "fields"
    fdir.mkdir(exist_ok=True)
    n = len(scene.cameras)
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            fld = oracle_field(scene, a, b, grid, grid)
            write_field(fld, fdir / f"{fld.source_id}__{fld.target_id}.imlc")

    qdir = out_dir / "queries"
    (qdir / "fields").mkdir(parents=True, exist_ok=True)
    meta = {"version": 1, "queries": []}
    desc_rows = []
    gt = {"version": 1, "poses": {}}
    for pose, intr, qid in queries:
        meta["queries"].append({"id": qid, "intrinsics": _intrinsics_json(intr)})
        desc_rows.append(view_descriptor(pose).astype(np.float16))
        gt["poses"][qid] = _pose_json(pose)
        for vi in range(n):
            fwd = oracle_field(scene, (pose, intr, qid), vi, grid, grid)
            write_field(fwd, qdir / "fields" / f"{qid}__{fwd.target_id}.imlc")
            bwd = oracle_field(scene, vi, (pose, intr, qid), grid, grid)
            write_field(bwd, qdir / "fields" / f"{bwd.source_id}__{qid}.imlc")
    (qdir / "queries.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    blob = bytearray(b"IMLD")
    dim = desc_rows[0].shape[0] if desc_rows else 0
    blob += int(dim).to_bytes(4, "little")
    blob += len(desc_rows).to_bytes(4, "little")
    if desc_rows:
        blob += np.stack(desc_rows).astype("<f2").tobytes()
    (qdir / "query_descriptors.bin").write_bytes(bytes(blob))
    (out_dir / "gt_poses.json").write_text(
        json.dumps(gt, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_synth_bench(args: argparse.Namespace) -> int:
    from . import acceptance

    if args.export_dir:
        from .synth import make_queries, make_scene

        spec = acceptance.bench_scene_spec(
            seed=derive_seed(args.seed, "synth-bench/scene"),
            num_cameras=args.cameras, image_size=args.image_size,
        )
        scene = make_scene(spec)
        queries = make_queries(scene, args.queries, derive_seed(args.seed, "synth-bench/queries"))
        export_scene_inputs(scene, queries, args.grid, Path(args.export_dir))
        print(f"exported scene inputs -> {args.export_dir}")

    try:
        checks = acceptance.run_all(
            seed=args.seed,
            quick=args.quick,
            reproj_threshold=args.reproj_threshold,
            skip=set(args.skip.split(",")) if args.skip else set(),
            max_iterations=args.max_iterations,
        )
    except ValueError as exc:
        return _error_record(2, f"invalid benchmark configuration: {exc}")
    # Wall-clock goes to stdout only; the CSV must be byte-reproducible.
    rows = ["# " + CSV_VERSION + " synth-bench", "check,passed,detail"]
    all_pass = True
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"[{status}] {c.name} ({c.seconds:.2f}s): {c.detail}")
        rows.append(f"{c.name},{int(c.passed)},\"{c.detail}\"")
        all_pass &= c.passed
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0 if all_pass else 1


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="visloc", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-map", help="triangulate depth and write a map directory")
    b.add_argument("--input", required=True, help="posed-image directory with fields/")
    b.add_argument("--fields", default=None,
                   help="correspondence-field directory (default: <input>/fields)")
    b.add_argument("--out", required=True)
    b.add_argument("--k-map", type=int, default=50)
    b.add_argument("--angular-threshold-deg", type=float, default=2.0)
    b.add_argument("--min-inliers", type=int, default=4)
    b.add_argument("--confidence-threshold", type=float, default=0.05)
    b.add_argument("--depth-min", type=float, default=DEFAULT_D_MIN)
    b.add_argument("--depth-max", type=float, default=DEFAULT_D_MAX)
    b.set_defaults(func=cmd_build_map)

    l = sub.add_parser("localize", help="localize queries against a map")
    l.add_argument("--map", required=True)
    l.add_argument("--queries", required=True)
    l.add_argument("--out", required=True)
    l.add_argument("--k-loc", type=int, default=10)
    l.add_argument("--reproj-threshold", type=float, default=12.0)
    l.add_argument("--max-iterations", type=int, default=100_000)
    l.add_argument("--seed", type=int, default=0)
    l.set_defaults(func=cmd_localize)

    e = sub.add_parser("eval", help="compute recall and median errors")
    e.add_argument("--results", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--thresholds", default="0.25:2,0.5:5,1:10")
    e.add_argument("--csv", default=None)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compress-sweep", help="storage/accuracy trade-off grid")
    c.add_argument("--map", required=True)
    c.add_argument("--queries", required=True)
    c.add_argument("--gt", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--k-loc", type=int, default=10)
    c.add_argument("--reproj-threshold", type=float, default=12.0)
    c.add_argument("--max-iterations", type=int, default=100_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--thresholds", default="0.25:2,0.5:5,1:10")
    c.add_argument("--keyframe-strides", default="1")
    c.add_argument("--rgb-factors", default="1")
    c.add_argument("--rgb-qualities", default="90")
    c.add_argument("--depth-factors", default="1")
    c.add_argument("--depth-bits", default="8")
    c.set_defaults(func=cmd_compress_sweep)

    s = sub.add_parser("synth-bench", help="synthetic benchmark + acceptance checks")
    s.add_argument("--out", default=None, help="CSV output path")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--quick", action="store_true", help="reduced problem sizes")
    s.add_argument("--reproj-threshold", type=float, default=12.0)
    s.add_argument("--max-iterations", type=int, default=100_000)
    s.add_argument("--skip", default="", help="comma-separated check names to skip")
    s.add_argument("--export-dir", default=None,
                   help="also write scene inputs usable by build-map/localize")
    s.add_argument("--cameras", type=int, default=6)
    s.add_argument("--image-size", type=int, default=140)
    s.add_argument("--grid", type=int, default=36)
    s.add_argument("--queries", type=int, default=12)
    s.set_defaults(func=cmd_synth_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
