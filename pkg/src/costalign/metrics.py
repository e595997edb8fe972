"""Overlap metrics, boundary distance loss, confusion metrics, and the
registration report record."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import DimensionMismatch, UndefinedBoundary, UndefinedMetric


def _binary_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a) > 0
    y = np.asarray(b) > 0
    if x.shape != y.shape:
        raise DimensionMismatch(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def dice(a, b) -> float:
    """Dice coefficient ``2|A∩B| / (|A|+|B|)``; two empty sets count as 1.

    Accepts binary masks or any equal-shape boolean indicator arrays (e.g.
    per-point label selections on index-aligned clouds).
    """
    x, y = _binary_pair(a, b)
    denom = int(x.sum()) + int(y.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((x & y).sum()) / denom


def iou(a, b) -> float:
    """Intersection over union; two empty sets count as 1."""
    x, y = _binary_pair(a, b)
    union = int((x | y).sum())
    if union == 0:
        return 1.0
    return int((x & y).sum()) / union


def boundary_loss(pred, truth) -> float:
    """Boundary distance loss: twice the summed truth-boundary distance over
    the symmetric-difference region (pixel units).

    The distance map is the exact Euclidean distance transform to the other
    side of the truth boundary: for background pixels the distance to the
    nearest truth pixel, for truth pixels the distance to the nearest
    background pixel. Zero iff the masks are identical.
    """
    p, t = _binary_pair(pred, truth)
    if not t.any() or t.all():
        raise UndefinedBoundary("truth mask has no boundary (uniform raster)")
    dist = np.where(t, distance_transform_edt(t), distance_transform_edt(~t))
    delta = p ^ t
    return 2.0 * float(dist[delta].sum())


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise UndefinedMetric("confusion counts must be non-negative")
        if self.tp + self.tn + self.fp + self.fn == 0:
            raise UndefinedMetric("confusion counts are all zero")


def classification_metrics(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(accuracy, sensitivity, specificity) from confusion counts; raises
    UndefinedMetric when a denominator is zero."""
    if counts.tp + counts.fn == 0:
        raise UndefinedMetric("sensitivity undefined: no positive ground truth")
    if counts.tn + counts.fp == 0:
        raise UndefinedMetric("specificity undefined: no negative ground truth")
    total = counts.tp + counts.tn + counts.fp + counts.fn
    accuracy = (counts.tn + counts.tp) / total
    sensitivity = counts.tp / (counts.tp + counts.fn)
    specificity = counts.tn / (counts.tn + counts.fp)
    return accuracy, sensitivity, specificity


@dataclass
class RegistrationReport:
    """Per-waypoint path-transfer errors with summary statistics and per-stage
    diagnostics. The standard deviation is the population formula (divide by
    n)."""

    method: str
    waypoint_errors_mm: list[float] | None
    mean_mm: float | None
    sd_mm: float | None
    stage_timings_ms: dict[str, float] = field(default_factory=dict)
    stage_residuals: dict[str, float] = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @classmethod
    def build(cls, method: str, waypoint_errors_mm=None, stage_timings_ms=None,
              stage_residuals=None, params=None) -> "RegistrationReport":
        errors = None
        mean = sd = None
        if waypoint_errors_mm is not None:
            arr = np.asarray(waypoint_errors_mm, dtype=np.float64).reshape(-1)
            if np.any(arr < 0):
                raise UndefinedMetric("waypoint errors must be non-negative")
            errors = [float(v) for v in arr]
            mean = float(arr.mean())
            sd = float(arr.std())
        return cls(method=method, waypoint_errors_mm=errors, mean_mm=mean, sd_mm=sd,
                   stage_timings_ms=dict(stage_timings_ms or {}),
                   stage_residuals=dict(stage_residuals or {}),
                   params=dict(params or {}))

    def to_json_dict(self, include_timings: bool = True) -> dict:
        out = {
            "method": self.method,
            "waypoint_errors_mm": self.waypoint_errors_mm,
            "mean_mm": self.mean_mm,
            "sd_mm": self.sd_mm,
            "stage_residuals": self.stage_residuals,
            "params": self.params,
        }
        if include_timings:
            out["stage_timings_ms"] = self.stage_timings_ms
        return out
