"""Batch export CLI: run matching/retrieval models, emit IMLC/IMLD files.

The bridge never does geometry; it loads images, runs a model, and
serializes the raw outputs.  Pair lists drive bidirectional field export:
each "query_id db_id" line produces <query>__<db>.imlc and <db>__<query>.imlc.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .formats import write_imlc, write_imld
from .models import BridgeModelError, descriptor_model, load_image_gray, matcher_model

__all__ = ["main", "export_fields", "export_descriptors"]

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _image_paths(images_dir: Path) -> dict[str, Path]:
    out = {}
    for p in sorted(images_dir.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES:
            out[p.stem] = p
    return out


def _read_pairs(path: Path) -> list[tuple[str, str]]:
    pairs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        a, b = line.split()
        pairs.append((a, b))
    return pairs


def export_fields(
    images_dir,
    pairs: list[tuple[str, str]],
    out_dir,
    model_id: str = "patch-ncc",
    resolution: int = 560,
    window: int = 6,
    patch: int = 9,
) -> list[Path]:
    """Run bidirectional dense matching for every pair; returns written paths."""
    images = _image_paths(Path(images_dir))
    missing = sorted({i for pair in pairs for i in pair if i not in images})
    if missing:
        raise FileNotFoundError(f"images not found under {images_dir}: {missing}")
    match = matcher_model(model_id, window=window, patch=patch)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache: dict[str, np.ndarray] = {}

    def gray(image_id: str) -> np.ndarray:
        if image_id not in cache:
            cache[image_id] = load_image_gray(images[image_id], resolution)
        return cache[image_id]

    written = []
    for a, b in pairs:
        for src, tgt in ((a, b), (b, a)):
            targets, conf = match(gray(src), gray(tgt))
            path = out_dir / f"{src}__{tgt}.imlc"
            write_imlc(path, src, tgt, targets, conf, scale_x=1.0, scale_y=1.0)
            written.append(path)
    return written


def export_descriptors(
    images_dir,
    out_path,
    model_id: str = "tiny-sig",
    dim: int = 128,
    manifest_path=None,
) -> list[str]:
    """Extract one global descriptor per image; returns the id order.

    Descriptors are unit-normalized, stored half precision.  The optional
    manifest records the id -> row mapping.
    """
    images = _image_paths(Path(images_dir))
    if not images:
        raise FileNotFoundError(f"no images under {images_dir}")
    describe = descriptor_model(model_id, dim=dim)
    ids = sorted(images)
    vectors = np.stack([describe(load_image_gray(images[i], 224)) for i in ids])
    write_imld(out_path, vectors.astype(np.float16))
    if manifest_path is not None:
        Path(manifest_path).write_text(
            json.dumps({"model": model_id, "dim": dim, "ids": ids}, indent=1,
                       sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return ids


def cmd_export_fields(args) -> int:
    pairs = _read_pairs(Path(args.pairs))
    try:
        written = export_fields(
            args.images, pairs, args.out, model_id=args.model,
            resolution=args.resolution, window=args.window, patch=args.patch,
        )
    except BridgeModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(written)} field files -> {args.out}")
    return 0


def cmd_export_descriptors(args) -> int:
    try:
        ids = export_descriptors(
            args.images, args.out, model_id=args.model, dim=args.dim,
            manifest_path=args.manifest,
        )
    except BridgeModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(ids)} descriptors -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="visloc-bridge", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("export-fields", help="bidirectional dense matching per pair")
    f.add_argument("--images", required=True, help="directory of input images")
    f.add_argument("--pairs", required=True, help="text file: one 'src dst' pair per line")
    f.add_argument("--out", required=True, help="output directory for .imlc files")
    f.add_argument("--model", default="patch-ncc")
    f.add_argument("--resolution", type=int, default=560)
    f.add_argument("--window", type=int, default=6)
    f.add_argument("--patch", type=int, default=9)
    f.set_defaults(func=cmd_export_fields)

    d = sub.add_parser("export-descriptors", help="global descriptor per image")
    d.add_argument("--images", required=True)
    d.add_argument("--out", required=True, help="output IMLD file")
    d.add_argument("--model", default="tiny-sig")
    d.add_argument("--dim", type=int, default=128)
    d.add_argument("--manifest", default=None, help="optional id-order JSON")
    d.set_defaults(func=cmd_export_descriptors)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
