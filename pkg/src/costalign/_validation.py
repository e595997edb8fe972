"""Input validation helpers and seeded RNG derivation.

These are the boundary checks used by both the functional API and the
sklearn-style estimators: everything is normalized to float64 here so the
numerical modules never see ragged or integer inputs.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DimensionMismatch, EmptyInput, InvalidParams


def as_points(obj, name: str = "points", allow_empty: bool = False) -> np.ndarray:
    """Coerce a PointCloud or array-like to a contiguous ``(N, 3)`` float64 array."""
    pts = getattr(obj, "points", obj)
    arr = np.ascontiguousarray(pts, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionMismatch(f"{name} must have shape (N, 3), got {arr.shape}", shape=list(arr.shape))
    if not allow_empty and arr.shape[0] == 0:
        raise EmptyInput(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidParams(f"{name} contains non-finite coordinates")
    return arr


def as_labels(labels, n: int) -> np.ndarray:
    """Coerce per-point labels to ``(n,)`` int64, default all-unassigned."""
    if labels is None:
        return np.full(n, -1, dtype=np.int64)
    arr = np.asarray(labels, dtype=np.int64).reshape(-1)
    if arr.shape[0] != n:
        raise DimensionMismatch(f"labels length {arr.shape[0]} != point count {n}")
    if arr.size and arr.min() < -1:
        raise InvalidParams("labels must be >= -1")
    return arr


def as_mask(obj, name: str = "mask") -> np.ndarray:
    """Coerce a binary mask to ``(H, W)`` uint8 with values in {0, 1}."""
    arr = np.asarray(obj)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty 2D raster, got shape {arr.shape}")
    out = (arr > 0).astype(np.uint8) if arr.dtype != np.uint8 else arr
    if out.dtype == np.uint8 and out.size and out.max() > 1:
        out = (out > 0).astype(np.uint8)
    return np.ascontiguousarray(out)


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise InvalidParams(f"{name} must be > 0, got {value}")
    return float(value)


def _stable_digest(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def derive_rng(seed: int, stage: str) -> np.random.Generator:
    """Derive an independent generator from a global seed and a stage name.

    Keyed by a stable hash of the stage name, so inserting a new stage does
    not perturb the streams of existing ones.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _stable_digest(stage)]))
