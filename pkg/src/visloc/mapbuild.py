"""Mapping-time orchestration: covisibility, depth triangulation, packaging.

Glue between the geometry engine and the map store: for each posed image,
pick covisible entries by retrieval similarity, triangulate its depth map
from the correspondence fields, quantize, and assemble MapEntry records.
The CLI wraps this with file I/O; synthetic benchmarks call it directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthbuild import TriangulationConfig, build_depth_map, select_covisible
from .mapstore import (
    DEFAULT_D_MAX,
    DEFAULT_D_MIN,
    Map,
    MapEntry,
    encode_rgb,
    quantize_depth,
)
from .matchio import CorrespondenceField
from .synth import Scene, corrupt, NoiseSpec, oracle_field, view_descriptor

__all__ = ["DepthBuildReport", "build_map_from_fields", "synthetic_map", "synthetic_query_jobs"]


@dataclass
class DepthBuildReport:
    entry_id: str
    valid_fraction: float
    num_covisible: int
    depth: object = None  # raw float DepthMap, kept for full-precision pipelines


def build_map_from_fields(
    posed_entries: list[MapEntry],
    fields_lookup,
    cfg: TriangulationConfig,
    d_min: float = DEFAULT_D_MIN,
    d_max: float = DEFAULT_D_MAX,
    levels: int = 255,
) -> tuple[Map, list[DepthBuildReport]]:
    """Triangulate and quantize depth for every posed entry.

    ``fields_lookup(src_entry, tgt_entry)`` returns the CorrespondenceField
    from src to tgt (raising KeyError/FileNotFoundError if absent).  Entries
    are processed in input order; covisible selection uses the entries'
    stored descriptors.
    """
    vmap = Map(entries=posed_entries)
    reports = []
    out_entries = []
    for entry in posed_entries:
        covis = select_covisible(entry, vmap, cfg.k_map)
        fields = [fields_lookup(entry, c) for c in covis]
        depth = build_depth_map(entry, covis, fields, cfg)
        qdepth = quantize_depth(depth, d_min, d_max, levels)
        out_entries.append(
            MapEntry(
                id=entry.id,
                pose=entry.pose,
                intrinsics=entry.intrinsics,
                rgb_payload=entry.rgb_payload,
                rgb_codec=entry.rgb_codec,
                qdepth=qdepth,
                descriptor=entry.descriptor,
            )
        )
        reports.append(
            DepthBuildReport(
                entry_id=entry.id,
                valid_fraction=float(depth.valid.mean()),
                num_covisible=len(covis),
                depth=depth,
            )
        )
    return Map(entries=out_entries, rgb_codec=vmap.rgb_codec), reports


def synthetic_posed_entries(scene: Scene, rgb_codec: str = "png") -> list[MapEntry]:
    """MapEntry stubs (no depth yet) for every scene camera."""
    entries = []
    for i, (pose, intr) in enumerate(scene.cameras):
        entries.append(
            MapEntry(
                id=scene.view_id(i),
                pose=pose,
                intrinsics=intr,
                rgb_payload=encode_rgb(scene.rgb_image(i), rgb_codec),
                rgb_codec=rgb_codec,
                qdepth=None,
                descriptor=view_descriptor(pose).astype(np.float16),
            )
        )
    return entries


def synthetic_map(
    scene: Scene,
    grid: int,
    cfg: TriangulationConfig,
    noise: NoiseSpec | None = None,
    noise_seed: int = 0,
    d_min: float = DEFAULT_D_MIN,
    d_max: float = DEFAULT_D_MAX,
    levels: int = 255,
    rgb_codec: str = "png",
) -> tuple[Map, list[DepthBuildReport]]:
    """Full synthetic mapping pipeline: oracle fields -> triangulated map."""
    posed = synthetic_posed_entries(scene, rgb_codec)
    idx = {e.id: i for i, e in enumerate(posed)}

    def lookup(src: MapEntry, tgt: MapEntry) -> CorrespondenceField:
        fld = oracle_field(scene, idx[src.id], idx[tgt.id], grid, grid)
        if noise is not None:
            pair_seed = (noise_seed * 1_000_003 + idx[src.id] * 997 + idx[tgt.id]) & 0xFFFFFFFF
            fld = corrupt(fld, noise, pair_seed)
        return fld

    return build_map_from_fields(posed, lookup, cfg, d_min, d_max, levels)


def synthetic_query_jobs(
    scene: Scene,
    queries: list,
    grid: int,
    k_loc: int = 10,
    noise: NoiseSpec | None = None,
    noise_seed: int = 0,
):
    """QueryJobs with bidirectional oracle fields against every map camera.

    ``queries`` comes from synth.make_queries.  Returns a list of
    (QueryJob, ground-truth Pose).
    """
    from .localizer import FieldPair, QueryJob

    jobs = []
    for qi, (pose, intr, qid) in enumerate(queries):
        fields = {}
        for vi in range(len(scene.cameras)):
            q2db = oracle_field(scene, (pose, intr, qid), vi, grid, grid)
            db2q = oracle_field(scene, vi, (pose, intr, qid), grid, grid)
            if noise is not None:
                base = (noise_seed * 7_368_787 + qi * 10_007 + vi * 13) & 0xFFFFFFFF
                q2db = corrupt(q2db, noise, base)
                db2q = corrupt(db2q, noise, base + 1)
            fields[scene.view_id(vi)] = FieldPair(query_to_db=q2db, db_to_query=db2q)
        jobs.append(
            (
                QueryJob(
                    query_id=qid,
                    intrinsics=intr,
                    descriptor=view_descriptor(pose),
                    fields=fields,
                    k_loc=k_loc,
                ),
                pose,
            )
        )
    return jobs
