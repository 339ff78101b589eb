"""Writers for the localization pipeline's exchange formats.

Implemented independently of the consumer package on purpose: the binary
layouts are the contract, and the bridge's files must parse bit-exactly with
the pipeline's own readers (covered by the test suite).

IMLC (correspondence field, little-endian): magic "IMLC", version u32 = 1,
source-id length u32 + UTF-8 bytes, target-id ditto, grid_w u32, grid_h u32,
scale_x f64, scale_y f64, then grid_w * grid_h records of (target_x f32,
target_y f32, confidence f32), row-major. Confidence 0 means "no match".

IMLD (descriptor block): magic "IMLD", dim u32, count u32, then count * dim
IEEE-754 half floats, row-major little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["write_imlc", "write_imld"]


def write_imlc(
    path,
    source_id: str,
    target_id: str,
    targets: np.ndarray,
    confidence: np.ndarray,
    scale_x: float = 1.0,
    scale_y: float = 1.0,
) -> None:
    targets = np.asarray(targets, dtype=np.float32)
    confidence = np.asarray(confidence, dtype=np.float32)
    if targets.ndim != 3 or targets.shape[2] != 2 or targets.shape[:2] != confidence.shape:
        raise ValueError(
            f"targets {targets.shape} and confidence {confidence.shape} disagree"
        )
    h, w = confidence.shape
    if np.nanmin(confidence) < 0 or np.nanmax(confidence) > 1 or np.isnan(confidence).any():
        raise ValueError("confidences must be finite within [0, 1]")
    matched = confidence > 0
    if not np.isfinite(targets[matched]).all():
        raise ValueError("matched cells must carry finite targets")
    records = np.empty((h, w, 3), dtype="<f4")
    records[..., :2] = targets
    records[..., 2] = confidence
    src = source_id.encode("utf-8")
    tgt = target_id.encode("utf-8")
    blob = b"".join(
        [
            b"IMLC",
            struct.pack("<I", 1),
            struct.pack("<I", len(src)),
            src,
            struct.pack("<I", len(tgt)),
            tgt,
            struct.pack("<II", w, h),
            struct.pack("<dd", float(scale_x), float(scale_y)),
            records.tobytes(),
        ]
    )
    Path(path).write_bytes(blob)


def write_imld(path, vectors: np.ndarray) -> None:
    vectors = np.atleast_2d(np.asarray(vectors, dtype="<f2"))
    count, dim = vectors.shape
    blob = b"IMLD" + struct.pack("<II", dim, count) + vectors.tobytes()
    Path(path).write_bytes(blob)
