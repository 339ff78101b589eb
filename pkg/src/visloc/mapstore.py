"""The on-disk map: depth quantization, manifest, payload packaging, reduction.

Map directory layout::

    manifest.json       entries (id, pose, intrinsics, file names, descriptor
                        index, depth quantization params), codec identifiers
    rgb/<id>.<ext>      compressed RGB payload (codec per manifest)
    depth/<id>.png      lossless grayscale PNG holding quantization codes
                        (8-bit container for <=8-bit codes, 16-bit for 9)
    descriptors.bin     "IMLD": magic, dim u32, count u32, then count*dim
                        IEEE-754 half floats, row-major little-endian

Depth quantization is logarithmic: depths are clipped to [d_min, d_max] and
mapped to ``levels`` uniform steps in log space; code 0 is reserved for
invalid pixels, bounding the worst-case relative error at
``exp(ln(d_max/d_min) / (2*(levels-1))) - 1`` (1.236% for the default
255-level, 0.25-128 m configuration).

Poses round-trip exactly: quaternion and translation components are written
as decimal text with 17 significant digits.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .depthbuild import DepthMap
from .geometry import CameraIntrinsics, Pose

__all__ = [
    "DEFAULT_D_MAX",
    "DEFAULT_D_MIN",
    "Map",
    "MapEntry",
    "MapReadError",
    "MapStats",
    "QuantizedDepthMap",
    "dequantize_depth",
    "map_stats",
    "quantize_depth",
    "read_map",
    "reduce_map",
    "write_map",
]

DEFAULT_D_MIN = 0.25
DEFAULT_D_MAX = 128.0
DESCRIPTOR_MAGIC = b"IMLD"
MANIFEST_VERSION = 1

RGB_CODECS = ("png", "jpeg")


class MapReadError(ValueError):
    """A map directory is missing or holds corrupt files."""


@dataclass
class QuantizedDepthMap:
    """Log-space depth codes; 0 marks invalid, 1..levels are valid levels."""

    codes: np.ndarray
    d_min: float = DEFAULT_D_MIN
    d_max: float = DEFAULT_D_MAX
    levels: int = 255
    intrinsics: CameraIntrinsics | None = None

    def __post_init__(self) -> None:
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")
        if not 1 <= self.levels <= 65535:
            raise ValueError(f"levels out of range: {self.levels}")
        dtype = np.uint8 if self.levels <= 255 else np.uint16
        self.codes = np.ascontiguousarray(self.codes, dtype=dtype)
        if self.codes.ndim != 2:
            raise ValueError("codes must be 2-D")
        if self.codes.max(initial=0) > self.levels:
            raise ValueError(f"code {self.codes.max()} exceeds {self.levels} levels")

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]


def quantize_depth(
    depth: DepthMap,
    d_min: float = DEFAULT_D_MIN,
    d_max: float = DEFAULT_D_MAX,
    levels: int = 255,
) -> QuantizedDepthMap:
    """Clip to [d_min, d_max] and quantize to log space.

    Valid depth d maps to ``1 + round(u * (levels-1))`` with
    ``u = ln(clip(d)/d_min) / ln(d_max/d_min)``; rounding is
    half-away-from-zero.  Invalid pixels get code 0.
    """
    if not 0 < d_min < d_max:
        raise ValueError(f"need 0 < d_min < d_max, got [{d_min}, {d_max}]")
    vals = depth.values.astype(np.float64)
    span = math.log(d_max) - math.log(d_min)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (np.log(np.clip(vals, d_min, d_max)) - math.log(d_min)) / span
    # u >= 0, so floor(x + 0.5) is round-half-away-from-zero
    codes = 1 + np.floor(u * (levels - 1) + 0.5)
    codes = np.where(depth.valid, codes, 0)
    return QuantizedDepthMap(
        codes=codes, d_min=d_min, d_max=d_max, levels=levels, intrinsics=depth.intrinsics
    )


def dequantize_depth(q: QuantizedDepthMap) -> DepthMap:
    """Inverse of quantization; exact on codes (quantize(dequantize(q)) == q)."""
    span = math.log(q.d_max / q.d_min)
    denom = max(q.levels - 1, 1)
    c = q.codes.astype(np.float64)
    depth = q.d_min * np.exp((c - 1.0) / denom * span)
    valid = q.codes > 0
    intr = q.intrinsics
    if intr is None:
        intr = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, q.width, q.height)
    return DepthMap(
        values=np.where(valid, depth, 0.0).astype(np.float32), valid=valid, intrinsics=intr
    )


@dataclass
class MapEntry:
    """One database image: pose, intrinsics, payload references, descriptor."""

    id: str
    pose: Pose
    intrinsics: CameraIntrinsics
    rgb_payload: bytes
    rgb_codec: str
    qdepth: QuantizedDepthMap | None
    descriptor: np.ndarray  # (dim,) float16, unit-normalized before storage

    def __post_init__(self) -> None:
        self.descriptor = np.ascontiguousarray(self.descriptor, dtype=np.float16)

    def decode_rgb(self) -> np.ndarray:
        with Image.open(io.BytesIO(self.rgb_payload)) as im:
            return np.asarray(im.convert("RGB"))


@dataclass
class Map:
    """In-memory map: ordered entries plus codec identifiers."""

    entries: list[MapEntry]
    rgb_codec: str = "png"
    depth_codec: str = "png"

    def __post_init__(self) -> None:
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate entry ids: {dupes}")

    def entry(self, entry_id: str) -> MapEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    @property
    def descriptor_dim(self) -> int:
        return 0 if not self.entries else int(self.entries[0].descriptor.shape[0])


@dataclass(frozen=True)
class MapStats:
    rgb_bytes: int
    depth_bytes: int
    descriptor_bytes: int
    manifest_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.rgb_bytes + self.depth_bytes + self.descriptor_bytes + self.manifest_bytes


def encode_rgb(image: np.ndarray, codec: str, quality: int = 90) -> bytes:
    """Encode an (H, W, 3) uint8 image; "png" is lossless, "jpeg" lossy."""
    if codec not in RGB_CODECS:
        raise ValueError(f"unsupported rgb codec {codec!r}; known: {RGB_CODECS}")
    buf = io.BytesIO()
    im = Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), mode="RGB")
    if codec == "png":
        im.save(buf, format="PNG", optimize=False)
    else:
        im.save(buf, format="JPEG", quality=int(quality))
    return buf.getvalue()


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _pose_record(pose: Pose) -> dict:
    return {"q": [_fmt(v) for v in pose.q], "t": [_fmt(v) for v in pose.t]}


def _pose_from_record(rec: dict) -> Pose:
    return Pose(np.array([float(v) for v in rec["q"]]), np.array([float(v) for v in rec["t"]]))


def _intrinsics_record(i: CameraIntrinsics) -> dict:
    return {"fx": _fmt(i.fx), "fy": _fmt(i.fy), "cx": _fmt(i.cx), "cy": _fmt(i.cy),
            "width": i.width, "height": i.height}


def _intrinsics_from_record(rec: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        float(rec["fx"]), float(rec["fy"]), float(rec["cx"]), float(rec["cy"]),
        int(rec["width"]), int(rec["height"]),
    )


def _write_depth_png(q: QuantizedDepthMap, path: Path) -> None:
    # Pillow infers "L" for uint8, "I;16" for uint16 grayscale
    arr = q.codes.astype(np.uint8) if q.levels <= 255 else q.codes.astype(np.uint16)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def _read_depth_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype == np.int32:  # Pillow reads 16-bit grayscale as mode "I"
        arr = arr.astype(np.uint16)
    return arr


def write_map(entries: list[MapEntry] | Map, directory, rgb_codec: str | None = None) -> Path:
    """Write a map directory; see module docstring for the layout."""
    vmap = entries if isinstance(entries, Map) else Map(entries=list(entries))
    codec = rgb_codec or vmap.rgb_codec
    if codec not in RGB_CODECS:
        raise ValueError(f"unsupported rgb codec {codec!r}; known: {RGB_CODECS}")
    root = Path(directory)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)

    dims = {int(e.descriptor.shape[0]) for e in vmap.entries}
    if len(dims) > 1:
        raise ValueError(f"mixed descriptor dimensions: {sorted(dims)}")
    dim = dims.pop() if dims else 0

    records = []
    desc_rows = []
    for idx, e in enumerate(vmap.entries):
        if e.rgb_codec != codec:
            payload = encode_rgb(e.decode_rgb(), codec)
        else:
            payload = e.rgb_payload
        ext = "png" if codec == "png" else "jpg"
        rgb_name = f"rgb/{e.id}.{ext}"
        (root / rgb_name).write_bytes(payload)
        depth_name = None
        depth_rec = None
        if e.qdepth is not None:
            depth_name = f"depth/{e.id}.png"
            _write_depth_png(e.qdepth, root / depth_name)
            depth_rec = {
                "d_min": _fmt(e.qdepth.d_min),
                "d_max": _fmt(e.qdepth.d_max),
                "levels": e.qdepth.levels,
            }
        records.append(
            {
                "id": e.id,
                "pose": _pose_record(e.pose),
                "intrinsics": _intrinsics_record(e.intrinsics),
                "rgb_file": rgb_name,
                "depth_file": depth_name,
                "depth_quant": depth_rec,
                "descriptor_index": idx,
            }
        )
        desc_rows.append(e.descriptor)

    manifest = {
        "format_version": MANIFEST_VERSION,
        "rgb_codec": codec,
        "depth_codec": "png",
        "descriptor_dim": dim,
        "entries": records,
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )

    blob = bytearray(DESCRIPTOR_MAGIC)
    blob += int(dim).to_bytes(4, "little")
    blob += len(desc_rows).to_bytes(4, "little")
    if desc_rows:
        blob += np.stack(desc_rows).astype("<f2").tobytes()
    (root / "descriptors.bin").write_bytes(bytes(blob))
    return root


def read_descriptors(path) -> np.ndarray:
    """Parse an IMLD descriptor block into an (N, dim) float16 array."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise MapReadError(f"descriptor file too short ({len(data)} bytes)")
    if data[:4] != DESCRIPTOR_MAGIC:
        raise MapReadError(f"bad descriptor magic {data[:4]!r}")
    dim = int.from_bytes(data[4:8], "little")
    count = int.from_bytes(data[8:12], "little")
    expected = 12 + 2 * dim * count
    if len(data) != expected:
        raise MapReadError(f"descriptor file is {len(data)} bytes, expected {expected}")
    if count == 0:
        return np.zeros((0, dim), dtype=np.float16)
    return np.frombuffer(data, dtype="<f2", offset=12).reshape(count, dim).copy()


def read_map(directory, require_depth: bool = True) -> Map:
    """Load a map directory; raises MapReadError naming the offending entry."""
    root = Path(directory)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise MapReadError(f"missing manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise MapReadError(f"unsupported manifest version {manifest.get('format_version')}")
    descs = read_descriptors(root / "descriptors.bin")
    records = manifest["entries"]
    if len(records) != descs.shape[0]:
        raise MapReadError(
            f"manifest lists {len(records)} entries but descriptor block has {descs.shape[0]}"
        )
    seen = set()
    entries = []
    for rec in records:
        eid = rec["id"]
        if eid in seen:
            raise MapReadError(f"duplicate entry id {eid!r} in manifest")
        seen.add(eid)
        intr = _intrinsics_from_record(rec["intrinsics"])
        rgb_path = root / rec["rgb_file"]
        if not rgb_path.is_file():
            raise MapReadError(f"entry {eid!r}: missing rgb payload {rec['rgb_file']}")
        qdepth = None
        if rec.get("depth_file"):
            depth_path = root / rec["depth_file"]
            if not depth_path.is_file():
                raise MapReadError(f"entry {eid!r}: missing depth payload {rec['depth_file']}")
            dq = rec["depth_quant"]
            try:
                codes = _read_depth_png(depth_path)
            except Exception as exc:
                raise MapReadError(f"entry {eid!r}: corrupt depth payload: {exc}") from exc
            qdepth = QuantizedDepthMap(
                codes=codes,
                d_min=float(dq["d_min"]),
                d_max=float(dq["d_max"]),
                levels=int(dq["levels"]),
                intrinsics=intr,
            )
        elif require_depth:
            raise MapReadError(f"entry {eid!r}: no depth payload in map")
        entries.append(
            MapEntry(
                id=eid,
                pose=_pose_from_record(rec["pose"]),
                intrinsics=intr,
                rgb_payload=rgb_path.read_bytes(),
                rgb_codec=manifest["rgb_codec"],
                qdepth=qdepth,
                descriptor=descs[rec["descriptor_index"]],
            )
        )
    return Map(entries=entries, rgb_codec=manifest["rgb_codec"],
               depth_codec=manifest.get("depth_codec", "png"))


def _downsample_codes_nearest_valid(codes: np.ndarray, factor: int) -> np.ndarray:
    """Blockwise reduction keeping the valid code nearest the block center.

    Ties resolve to the first row-major candidate; all-invalid blocks give 0.
    """
    if factor == 1:
        return codes.copy()
    h, w = codes.shape
    out_h = (h + factor - 1) // factor
    out_w = (w + factor - 1) // factor
    out = np.zeros((out_h, out_w), dtype=codes.dtype)
    for br in range(out_h):
        r0, r1 = br * factor, min((br + 1) * factor, h)
        for bc in range(out_w):
            c0, c1 = bc * factor, min((bc + 1) * factor, w)
            block = codes[r0:r1, c0:c1]
            rows, cols = np.nonzero(block > 0)
            if rows.size == 0:
                continue
            cen_r = (r1 - r0 - 1) / 2.0
            cen_c = (c1 - c0 - 1) / 2.0
            d2 = (rows - cen_r) ** 2 + (cols - cen_c) ** 2
            best = int(np.argmin(d2))  # first minimum: row-major tie break
            out[br, bc] = block[rows[best], cols[best]]
    return out


def _requantize_codes(q: QuantizedDepthMap, new_levels: int) -> QuantizedDepthMap:
    if new_levels == q.levels:
        return QuantizedDepthMap(q.codes.copy(), q.d_min, q.d_max, q.levels, q.intrinsics)
    old_denom = max(q.levels - 1, 1)
    u = (q.codes.astype(np.float64) - 1.0) / old_denom
    codes = 1 + np.floor(u * (new_levels - 1) + 0.5)
    codes = np.where(q.codes > 0, codes, 0)
    return QuantizedDepthMap(codes, q.d_min, q.d_max, new_levels, q.intrinsics)


def reduce_map(
    vmap: Map,
    keyframe_stride: int = 1,
    rgb_resolution_factor: float = 1.0,
    rgb_quality: int = 90,
    depth_resolution_factor: int = 1,
    depth_bits: int = 8,
) -> Map:
    """Compression-sweep reduction: keyframe subsampling, payload shrinking.

    Keyframes keep every ``keyframe_stride``-th entry of the
    lexicographically-sorted id list.  Depth is downsampled nearest-valid
    per block and requantized to ``2**depth_bits - 1`` valid levels (9-bit
    codes widen to a 16-bit container).  RGB is Lanczos-resampled by the
    resolution factor and re-encoded (quality applies to lossy codecs).
    The identity setting (stride 1, factors 1, 8 bits) returns payloads
    byte-identical to the input.
    """
    if keyframe_stride < 1:
        raise ValueError("keyframe_stride must be >= 1")
    if rgb_resolution_factor < 1 or depth_resolution_factor < 1:
        raise ValueError("resolution factors must be >= 1")
    if not 5 <= depth_bits <= 9:
        raise ValueError(f"depth_bits must be within 5..9, got {depth_bits}")
    kept_ids = sorted(e.id for e in vmap.entries)[::keyframe_stride]
    kept = set(kept_ids)
    new_levels = 2**depth_bits - 1

    out_entries = []
    for e in vmap.entries:
        if e.id not in kept:
            continue
        qdepth = e.qdepth
        if qdepth is not None:
            codes = _downsample_codes_nearest_valid(qdepth.codes, int(depth_resolution_factor))
            qdepth = _requantize_codes(
                QuantizedDepthMap(codes, qdepth.d_min, qdepth.d_max, qdepth.levels,
                                  qdepth.intrinsics),
                new_levels,
            )
        identity_rgb = rgb_resolution_factor == 1 and (
            vmap.rgb_codec == "png" or rgb_quality == 90
        )
        if identity_rgb:
            payload, codec = e.rgb_payload, e.rgb_codec
        else:
            img = e.decode_rgb()
            h, w = img.shape[:2]
            new_w = max(1, round(w / rgb_resolution_factor))
            new_h = max(1, round(h / rgb_resolution_factor))
            im = Image.fromarray(img, mode="RGB")
            if (new_w, new_h) != (w, h):
                im = im.resize((new_w, new_h), Image.LANCZOS)
            buf = io.BytesIO()
            if vmap.rgb_codec == "png":
                im.save(buf, format="PNG", optimize=False)
            else:
                im.save(buf, format="JPEG", quality=int(rgb_quality))
            payload, codec = buf.getvalue(), vmap.rgb_codec
        out_entries.append(
            MapEntry(
                id=e.id,
                pose=e.pose,
                intrinsics=e.intrinsics,
                rgb_payload=payload,
                rgb_codec=codec,
                qdepth=qdepth,
                descriptor=e.descriptor.copy(),
            )
        )
    return Map(entries=out_entries, rgb_codec=vmap.rgb_codec, depth_codec=vmap.depth_codec)


def map_stats(directory) -> MapStats:
    """Exact per-component byte accounting of a map directory."""
    root = Path(directory)
    rgb = sum(f.stat().st_size for f in (root / "rgb").glob("*") if f.is_file()) \
        if (root / "rgb").is_dir() else 0
    depth = sum(f.stat().st_size for f in (root / "depth").glob("*") if f.is_file()) \
        if (root / "depth").is_dir() else 0
    desc = (root / "descriptors.bin").stat().st_size if (root / "descriptors.bin").is_file() else 0
    manifest = (root / "manifest.json").stat().st_size if (root / "manifest.json").is_file() else 0
    return MapStats(rgb, depth, desc, manifest)
