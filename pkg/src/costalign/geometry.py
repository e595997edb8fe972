"""Core geometric primitives: labeled point clouds, rigid transforms, exact solvers.

All coordinates are millimetres. The rigid solver is the SVD/cross-covariance
least-squares fit with a determinant correction for reflections; it is the one
primitive every registration routine in this package leans on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_labels, as_points
from .errors import DegenerateGeometry, EmptyInput, PairMismatch

ORTHONORMAL_TOL = 1e-9


@dataclass
class PointCloud:
    """Ordered labeled 3D points.

    Labels: -1 unassigned, 0 sternum, 1..k cartilage branches.
    """

    points: np.ndarray
    labels: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.points = as_points(self.points, "points", allow_empty=True)
        self.labels = as_labels(self.labels, len(self.points))

    def __len__(self) -> int:
        return self.points.shape[0]

    def select(self, mask) -> "PointCloud":
        """Subset by boolean mask or index array; labels follow."""
        idx = np.asarray(mask)
        return PointCloud(self.points[idx], self.labels[idx])

    def branch(self, label: int) -> "PointCloud":
        return self.select(self.labels == label)

    def branch_labels(self) -> np.ndarray:
        """Sorted positive labels present in the cloud."""
        uniq = np.unique(self.labels)
        return uniq[uniq > 0]

    def copy(self) -> "PointCloud":
        return PointCloud(self.points.copy(), self.labels.copy())


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: ``p -> rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)
        if np.abs(rot.T @ rot - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise DegenerateGeometry("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise DegenerateGeometry("rotation determinant != +1 (reflection?)")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply_points(self, pts) -> np.ndarray:
        arr = as_points(pts, allow_empty=True)
        return arr @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def centroid(cloud) -> np.ndarray:
    """Arithmetic mean of the points."""
    pts = as_points(cloud, "cloud", allow_empty=True)
    if pts.shape[0] == 0:
        raise EmptyInput("cannot take the centroid of an empty cloud")
    return pts.mean(axis=0)


def fit_rigid(source, target) -> RigidTransform:
    """Least-squares rigid fit mapping paired ``source[i] -> target[i]``.

    SVD of the centered cross-covariance with a determinant correction so the
    result is always a proper rotation. Raises PairMismatch on unequal counts
    and DegenerateGeometry when the paired sets carry less than rank-2 spread
    (fewer than 3 points, or all points collinear on both sides).
    """
    src = as_points(source, "source")
    dst = as_points(target, "target")
    if src.shape[0] != dst.shape[0]:
        raise PairMismatch(f"paired clouds differ in size: {src.shape[0]} vs {dst.shape[0]}",
                           source=src.shape[0], target=dst.shape[0])
    if src.shape[0] < 3:
        raise DegenerateGeometry("rigid fit needs at least 3 paired points", count=src.shape[0])

    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    a = src - c_src
    b = dst - c_dst
    if _spread_rank(a) < 2 or _spread_rank(b) < 2:
        raise DegenerateGeometry("paired points are collinear; rotation is unconstrained")

    u, _, vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, c_dst - rot @ c_src)


def _spread_rank(centered: np.ndarray, rel_tol: float = 1e-9) -> int:
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


def rigid_residual(transform: RigidTransform, source, target) -> float:
    """Mean squared distance ``mean ||T s_i - t_i||^2`` over the pairs."""
    src = as_points(source)
    dst = as_points(target)
    if src.shape[0] != dst.shape[0]:
        raise PairMismatch("paired clouds differ in size")
    diff = transform.apply_points(src) - dst
    return float(np.mean(np.sum(diff * diff, axis=1)))


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Per-point affine map; labels preserved."""
    return PointCloud(transform.apply_points(cloud.points), cloud.labels.copy())


def pca_axes(cloud) -> tuple[np.ndarray, np.ndarray]:
    """Principal axes of a cloud, ordered by descending eigenvalue.

    Returns ``(axes, eigenvalues)`` where ``axes[i]`` is the i-th axis (rows).
    The basis is right-handed; each of the two leading axes has its
    largest-magnitude component made positive, and the third axis is their
    cross product, which pins the sign pattern deterministically.
    Rank-deficient clouds are fine (trailing eigenvalues are 0); only clouds
    with fewer than 3 points or zero total spread are rejected.
    """
    pts = as_points(cloud, "cloud")
    if pts.shape[0] < 3:
        raise DegenerateGeometry("PCA needs at least 3 points", count=pts.shape[0])
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    if evals[0] <= 1e-18:
        raise DegenerateGeometry("all points coincide; covariance is zero")
    axes = evecs[:, order].T
    for i in range(2):
        k = int(np.argmax(np.abs(axes[i])))
        if axes[i, k] < 0:
            axes[i] = -axes[i]
    axes[2] = np.cross(axes[0], axes[1])
    return axes, evals
