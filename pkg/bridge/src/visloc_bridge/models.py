"""Model registry: classical built-ins plus optional external neural models.

The built-in models need no downloads and keep the export pipeline runnable
offline; external entries ("roma", "megaloc") resolve to their packages when
installed and fail with a clean error naming the model id otherwise.
"""

from __future__ import annotations

import importlib

import numpy as np
from PIL import Image

from .matching import MatchParams, dense_match

__all__ = [
    "BridgeModelError",
    "descriptor_model",
    "load_image_gray",
    "matcher_model",
]

EXTERNAL_MATCHERS = {"roma": "romatch"}
EXTERNAL_DESCRIPTORS = {"megaloc": "megaloc", "netvlad": "netvlad"}


class BridgeModelError(RuntimeError):
    def __init__(self, model_id: str, reason: str):
        super().__init__(f"model {model_id!r} unavailable: {reason}")
        self.model_id = model_id


def load_image_gray(path, resolution: int) -> np.ndarray:
    """Grayscale float image resampled to resolution x resolution (Lanczos)."""
    with Image.open(path) as im:
        gray = im.convert("L").resize((resolution, resolution), Image.LANCZOS)
    return np.asarray(gray, dtype=np.float64) / 255.0


def _require_external(model_id: str, package: str):
    try:
        return importlib.import_module(package)
    except ImportError as exc:
        raise BridgeModelError(
            model_id, f"python package {package!r} is not installed"
        ) from exc


def matcher_model(model_id: str, window: int = 6, patch: int = 9):
    """Return fn(source_gray, target_gray) -> (targets, confidence)."""
    if model_id == "patch-ncc":
        params = MatchParams(patch=patch, window=window)
        return lambda a, b: dense_match(a, b, params)
    if model_id in EXTERNAL_MATCHERS:
        _require_external(model_id, EXTERNAL_MATCHERS[model_id])
        raise BridgeModelError(model_id, "external matcher adapter requires model weights")
    raise BridgeModelError(model_id, "unknown matcher id (built-in: patch-ncc)")


def _tiny_signature(gray: np.ndarray, dim: int) -> np.ndarray:
    """Deterministic global descriptor from block statistics and gradients."""
    side = 16
    img = np.asarray(
        Image.fromarray((gray * 255).astype(np.uint8)).resize((side, side), Image.LANCZOS),
        dtype=np.float64,
    ) / 255.0
    gy, gx = np.gradient(img)
    feats = [img.reshape(-1) - img.mean(), gx.reshape(-1), gy.reshape(-1)]
    v = np.concatenate(feats)
    if dim <= v.shape[0]:
        v = v[:dim]
    else:
        v = np.concatenate([v, np.zeros(dim - v.shape[0])])
    norm = np.linalg.norm(v)
    if norm < 1e-12:  # flat image: fall back to a fixed unit vector
        v = np.zeros(dim)
        v[0] = 1.0
        return v
    return v / norm


def descriptor_model(model_id: str, dim: int = 128):
    """Return fn(gray_image) -> unit float64 vector of length dim."""
    if model_id == "tiny-sig":
        return lambda gray: _tiny_signature(gray, dim)
    if model_id in EXTERNAL_DESCRIPTORS:
        _require_external(model_id, EXTERNAL_DESCRIPTORS[model_id])
        raise BridgeModelError(model_id, "external descriptor adapter requires model weights")
    raise BridgeModelError(model_id, "unknown descriptor id (built-in: tiny-sig)")
