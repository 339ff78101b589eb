"""Correspondence-field data model and its binary exchange format.

A correspondence field is the output of a dense matcher for one ordered
image pair: a grid over the source image where each cell holds the matched
target-image position and a confidence in [0, 1].  Confidence exactly 0 is
the "no match" sentinel; target coordinates of such cells may be NaN and
are preserved byte-for-byte through serialization.

Binary layout (``IMLC``, little-endian)::

    magic     4 bytes  b"IMLC"
    version   u32      1
    src_len   u32      followed by src_len UTF-8 bytes (source image id)
    tgt_len   u32      followed by tgt_len UTF-8 bytes (target image id)
    grid_w    u32
    grid_h    u32
    scale_x   f64      source grid-to-pixel scale
    scale_y   f64
    records   grid_w * grid_h * (target_x f32, target_y f32, conf f32),
              row-major over (row, col)

Sparse matchers are represented by leaving all unmatched cells at
confidence 0, so a k-match field behaves identically to a dense field
zero-padded elsewhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CorrespondenceField",
    "FilteredMatch",
    "FieldFormatError",
    "FieldMagicError",
    "FieldVersionError",
    "FieldTruncatedError",
    "MAGIC",
    "VERSION",
    "filter_matches",
    "filter_matches_arrays",
    "read_field",
    "write_field",
]

MAGIC = b"IMLC"
VERSION = 1


class FieldFormatError(ValueError):
    """Malformed field file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class FieldMagicError(FieldFormatError):
    pass


class FieldVersionError(FieldFormatError):
    pass


class FieldTruncatedError(FieldFormatError):
    pass


@dataclass
class CorrespondenceField:
    """Per-cell match targets and confidences from a source to a target image.

    ``targets`` is (grid_h, grid_w, 2) in target-image pixel coordinates;
    ``confidence`` is (grid_h, grid_w) in [0, 1].  The source pixel of cell
    (row, col) is ``((col + 0.5) * scale_x, (row + 0.5) * scale_y)``.
    Arrays are held in float64 (full precision for synthetic oracles) or
    float32 (file-backed); serialization always emits float32 records.
    """

    source_id: str
    target_id: str
    targets: np.ndarray
    confidence: np.ndarray
    scale_x: float = 1.0
    scale_y: float = 1.0

    def __post_init__(self) -> None:
        # float32 arrays (e.g. file-backed) are kept as-is so that NaN
        # payloads survive a read -> write cycle byte-for-byte; anything
        # else is held at full precision until serialization.
        t_dtype = np.float32 if np.asarray(self.targets).dtype == np.float32 else np.float64
        c_dtype = np.float32 if np.asarray(self.confidence).dtype == np.float32 else np.float64
        self.targets = np.ascontiguousarray(self.targets, dtype=t_dtype)
        self.confidence = np.ascontiguousarray(self.confidence, dtype=c_dtype)
        if self.targets.ndim != 3 or self.targets.shape[2] != 2:
            raise ValueError(f"targets must be (H, W, 2), got {self.targets.shape}")
        if self.confidence.shape != self.targets.shape[:2]:
            raise ValueError(
                f"confidence shape {self.confidence.shape} does not match "
                f"targets {self.targets.shape[:2]}"
            )
        h, w = self.confidence.shape
        if h <= 0 or w <= 0:
            raise ValueError(f"grid dimensions must be positive, got {w}x{h}")
        conf = self.confidence
        if np.any(~np.isfinite(conf)) or conf.min() < 0 or conf.max() > 1:
            raise ValueError("confidences must be finite and within [0, 1]")
        matched = conf > 0
        if np.any(~np.isfinite(self.targets[matched])):
            raise ValueError("matched cells (confidence > 0) must have finite targets")

    @property
    def grid_w(self) -> int:
        return self.confidence.shape[1]

    @property
    def grid_h(self) -> int:
        return self.confidence.shape[0]


@dataclass(frozen=True)
class FilteredMatch:
    """A confidence-gated match in source/target image pixel coordinates."""

    source_px: np.ndarray
    target_px: np.ndarray
    confidence: float


def write_field(field: CorrespondenceField, destination) -> None:
    """Serialize a field; ``read_field`` of the result is bit-exact."""
    src = field.source_id.encode("utf-8")
    tgt = field.target_id.encode("utf-8")
    records = np.empty((field.grid_h, field.grid_w, 3), dtype="<f4")
    records[..., :2] = field.targets
    records[..., 2] = field.confidence
    blob = b"".join(
        [
            MAGIC,
            struct.pack("<I", VERSION),
            struct.pack("<I", len(src)),
            src,
            struct.pack("<I", len(tgt)),
            tgt,
            struct.pack("<II", field.grid_w, field.grid_h),
            struct.pack("<dd", field.scale_x, field.scale_y),
            records.tobytes(),
        ]
    )
    Path(destination).write_bytes(blob)


def read_field(source) -> CorrespondenceField:
    """Parse an ``IMLC`` file; raises FieldFormatError subclasses on damage."""
    data = Path(source).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise FieldTruncatedError(
                f"truncated file: need {n} bytes for {what}, have {len(data) - off}", off
            )
        chunk = data[off : off + n]
        off += n
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise FieldMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FieldVersionError(f"unsupported version {version}, expected {VERSION}", 4)
    (src_len,) = struct.unpack("<I", take(4, "source id length"))
    src = take(src_len, "source id").decode("utf-8")
    (tgt_len,) = struct.unpack("<I", take(4, "target id length"))
    tgt = take(tgt_len, "target id").decode("utf-8")
    grid_w, grid_h = struct.unpack("<II", take(8, "grid dimensions"))
    scale_x, scale_y = struct.unpack("<dd", take(16, "scale factors"))
    n_rec = grid_w * grid_h
    payload = take(12 * n_rec, "records")
    if off != len(data):
        raise FieldFormatError(f"{len(data) - off} trailing bytes after records", off)
    records = np.frombuffer(payload, dtype="<f4").reshape(grid_h, grid_w, 3).copy()
    try:
        return CorrespondenceField(
            source_id=src,
            target_id=tgt,
            targets=records[..., :2],
            confidence=records[..., 2],
            scale_x=scale_x,
            scale_y=scale_y,
        )
    except ValueError as exc:
        raise FieldFormatError(f"invalid field content: {exc}", len(data) - 12 * n_rec) from exc


def filter_matches_arrays(
    field: CorrespondenceField, threshold: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Array view of ``filter_matches``: (source_px (M,2), target_px (M,2),
    confidence (M,), flat row-major cell index (M,)).
    """
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    conf = field.confidence
    mask = (conf >= threshold) & (conf > 0)  # 0 is the no-match sentinel
    rows, cols = np.nonzero(mask)
    src = np.stack(
        [(cols + 0.5) * field.scale_x, (rows + 0.5) * field.scale_y], axis=-1
    ).astype(np.float64)
    tgt = field.targets[rows, cols].astype(np.float64)
    return src, tgt, conf[rows, cols].astype(np.float64), rows * field.grid_w + cols


def filter_matches(field: CorrespondenceField, threshold: float) -> list[FilteredMatch]:
    """Cells with confidence >= threshold (and > 0), in row-major order.

    Source pixels are grid cell centers mapped through the grid-to-pixel
    scale factors.
    """
    src, tgt, conf, _ = filter_matches_arrays(field, threshold)
    return [FilteredMatch(src[i], tgt[i], float(conf[i])) for i in range(len(conf))]
