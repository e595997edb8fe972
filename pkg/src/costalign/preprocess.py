"""Cleaning of raw subject clouds and coarse subject-to-template alignment.

The chain mirrors a typical acquisition cleanup: density clustering to find
cartilage blobs, small-cluster removal, lateral side split, synthesis of a
flat stand-in sternum between the sides, then a rigid coarse alignment that
matches sternum centroids and principal frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._validation import as_points
from .errors import (AmbiguousSide, EmptyAfterFilter, EmptyInput, InvalidParams,
                     MissingSide, MissingSternum)
from .geometry import PointCloud, RigidTransform, centroid, pca_axes

DEFAULT_MIN_CLUSTER_FRACTION = 0.05


@dataclass(frozen=True)
class ClusteringParams:
    eps: float = 8.0
    min_points: int = 16
    min_cluster_size: int | None = None  # None: 5% of the cloud; settable to an absolute count

    def validate(self) -> None:
        if not self.eps > 0:
            raise InvalidParams("eps must be > 0")
        if self.min_points < 1:
            raise InvalidParams("min_points must be >= 1")

    def resolve_min_cluster_size(self, n_points: int) -> int:
        if self.min_cluster_size is not None:
            return int(self.min_cluster_size)
        return max(1, int(round(DEFAULT_MIN_CLUSTER_FRACTION * n_points)))


def dbscan(cloud, params: ClusteringParams) -> np.ndarray:
    """Density clustering; returns per-point cluster ids with -1 for noise.

    Core point: at least ``min_points`` neighbors within ``eps`` (the point
    itself counts). Clusters are the density-connected components of the core
    points; border points join the cluster of their nearest core point, with
    exact ties broken by the core's coordinates, so the resulting partition is
    a pure function of the point set (independent of input order).
    """
    params.validate()
    pts = as_points(cloud, "cloud")
    n = pts.shape[0]
    eps = float(params.eps)
    eps2 = eps * eps

    # Uniform grid with cell size eps: all neighbors live in the 27 adjacent cells.
    cells = np.floor(pts / eps).astype(np.int64)
    grid: dict[tuple, list] = {}
    for i, key in enumerate(map(tuple, cells)):
        grid.setdefault(key, []).append(i)

    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]

    def neighbors(i: int) -> np.ndarray:
        cx, cy, cz = cells[i]
        cand: list[int] = []
        for dx, dy, dz in offsets:
            cand.extend(grid.get((cx + dx, cy + dy, cz + dz), ()))
        cand_arr = np.asarray(cand, dtype=np.int64)
        d2 = np.sum((pts[cand_arr] - pts[i]) ** 2, axis=1)
        return cand_arr[d2 <= eps2]

    neighbor_lists = [neighbors(i) for i in range(n)]
    core = np.array([len(nb) >= params.min_points for nb in neighbor_lists])

    ids = np.full(n, -1, dtype=np.int64)
    current = 0
    for i in range(n):
        if not core[i] or ids[i] != -1:
            continue
        ids[i] = current
        stack = [i]
        while stack:
            j = stack.pop()
            for k in neighbor_lists[j]:
                if core[k] and ids[k] == -1:
                    ids[k] = current
                    stack.append(k)
        current += 1

    # Border points: nearest core neighbor wins; ties resolved by coordinates.
    for i in range(n):
        if core[i]:
            continue
        cand = neighbor_lists[i]
        cand = cand[core[cand]]
        if len(cand) == 0:
            continue
        d2 = np.sum((pts[cand] - pts[i]) ** 2, axis=1)
        best = np.lexsort((pts[cand][:, 2], pts[cand][:, 1], pts[cand][:, 0], d2))[0]
        ids[i] = ids[cand[best]]

    return _canonical_ids(ids, pts)


def _canonical_ids(ids: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Relabel clusters by the lexicographically smallest member coordinate so
    ids do not depend on input point order."""
    out = np.full_like(ids, -1)
    keys = []
    for cid in np.unique(ids[ids >= 0]):
        member_pts = pts[ids == cid]
        k = np.lexsort((member_pts[:, 2], member_pts[:, 1], member_pts[:, 0]))[0]
        keys.append((tuple(member_pts[k]), cid))
    for new_id, (_, cid) in enumerate(sorted(keys)):
        out[ids == cid] = new_id
    return out


def filter_small_clusters(cloud: PointCloud, ids, min_cluster_size: int) -> tuple[PointCloud, np.ndarray]:
    """Drop noise and clusters below the size threshold.

    Returns the surviving subcloud together with its cluster ids.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape[0] != len(cloud):
        raise InvalidParams("cluster ids not aligned with cloud")
    keep = np.zeros(len(cloud), dtype=bool)
    for cid in np.unique(ids[ids >= 0]):
        member = ids == cid
        if int(member.sum()) >= min_cluster_size:
            keep |= member
    if not keep.any():
        raise EmptyAfterFilter("no cluster meets the size threshold",
                               threshold=int(min_cluster_size))
    return cloud.select(keep), ids[keep]


def split_left_right(cloud: PointCloud, ids) -> tuple[list[int], list[int]]:
    """Assign clusters to lateral sides by the sign of their centroid along the
    medio-lateral axis (the first principal axis of a canonicalized cloud).

    Expects a PCA-canonicalized cloud: axis 0 is medio-lateral. Returns the
    cluster ids of each side; a centroid within 1e-9 of the dividing plane is
    ambiguous.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if len(cloud) == 0:
        raise EmptyInput("empty cloud")
    center = centroid(cloud)
    left, right = [], []
    for cid in np.unique(ids[ids >= 0]):
        c = cloud.points[ids == cid].mean(axis=0)
        coord = float(c[0] - center[0])
        if abs(coord) < 1e-9:
            raise AmbiguousSide(f"cluster {int(cid)} centroid lies on the dividing plane", cluster=int(cid))
        (left if coord < 0 else right).append(int(cid))
    return left, right


def canonicalize(cloud: PointCloud) -> tuple[PointCloud, RigidTransform]:
    """Center the cloud and rotate its principal axes onto x, y, z.

    Returns the canonical cloud and the transform that produced it (so results
    can be mapped back with its inverse).
    """
    axes, _ = pca_axes(cloud)
    c = centroid(cloud)
    transform = RigidTransform(axes, -axes @ c)
    return PointCloud(transform.apply_points(cloud.points), cloud.labels.copy()), transform


def synth_sternum(left: PointCloud, right: PointCloud) -> PointCloud:
    """Rectangular stand-in sternum bridging the two medial extreme planes.

    Operates in canonical coordinates (x medio-lateral, z vertical): the grid
    spans x from the left side's maximum to the right side's minimum and z over
    the combined vertical extent, at the combined median y. Grid pitch is the
    median nearest-neighbor spacing of the inputs. All output labels are 0.
    """
    if len(left) == 0 or len(right) == 0:
        raise MissingSide("both sides are required to span a sternum",
                          left=len(left), right=len(right))
    x0 = float(left.points[:, 0].max())
    x1 = float(right.points[:, 0].min())
    both = np.vstack([left.points, right.points])
    z0, z1 = float(both[:, 2].min()), float(both[:, 2].max())
    y = float(np.median(both[:, 1]))

    pitch = _median_nn_spacing(both)
    xs = _grid_coords(x0, x1, pitch)
    zs = _grid_coords(z0, z1, pitch)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    pts = np.stack([gx.ravel(), np.full(gx.size, y), gz.ravel()], axis=1)
    return PointCloud(pts, np.zeros(len(pts), dtype=np.int64))


def _median_nn_spacing(pts: np.ndarray) -> float:
    if pts.shape[0] < 2:
        return 1.0
    tree = cKDTree(pts)
    d, _ = tree.query(pts, k=2)
    med = float(np.median(d[:, 1]))
    return med if med > 0 else 1.0


def _grid_coords(lo: float, hi: float, pitch: float) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    n = max(2, int(round((hi - lo) / pitch)) + 1)
    return np.linspace(lo, hi, n)


def coarse_align(subject: PointCloud, template: PointCloud,
                 tie_tolerance: float = 0.05) -> RigidTransform:
    """Rigid transform mapping the subject into the template frame by matching
    sternum centroids and principal frames (sternum = label 0 on both clouds).

    Of the four right-handed axis-sign hypotheses, the one with the lowest
    sternum-to-sternum RMS nearest-neighbor distance wins; hypotheses within
    ``tie_tolerance`` relative RMS of the best are re-ranked by full-cloud RMS,
    which settles near-symmetric sternums.
    """
    st_subject = subject.branch(0) if _has_sternum(subject) else None
    st_template = template.branch(0) if _has_sternum(template) else None
    if st_subject is None or st_template is None:
        raise MissingSternum("both clouds must carry sternum points (label 0)",
                             subject=_has_sternum(subject), template=_has_sternum(template))

    axes_s, _ = pca_axes(st_subject)
    axes_t, _ = pca_axes(st_template)
    c_s = centroid(st_subject)
    c_t = centroid(st_template)

    template_tree = cKDTree(st_template.points)
    full_tree = cKDTree(template.points)
    signs = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]

    candidates = []
    for s in signs:
        rot = axes_t.T @ np.diag(s).astype(float) @ axes_s
        transform = RigidTransform(rot, c_t - rot @ c_s)
        candidates.append((_rms_nn(template_tree, transform.apply_points(st_subject.points)), transform))

    candidates.sort(key=lambda c: c[0])
    best_rms = candidates[0][0]
    near = [c for c in candidates if c[0] <= best_rms * (1.0 + tie_tolerance) + 1e-12]
    if len(near) > 1:
        near.sort(key=lambda c: _rms_nn(full_tree, c[1].apply_points(subject.points)))
    return near[0][1]


def _has_sternum(cloud: PointCloud) -> bool:
    return bool(np.any(cloud.labels == 0))


def _rms_nn(tree: cKDTree, pts: np.ndarray) -> float:
    d, _ = tree.query(pts, k=1)
    return float(np.sqrt(np.mean(d * d)))


def sternum_rms(subject: PointCloud, template: PointCloud,
                transform: RigidTransform | None = None) -> float:
    """Sternum-to-sternum RMS nearest-neighbor distance, optionally after a
    transform; the monotone-improvement check for coarse_align."""
    if not (_has_sternum(subject) and _has_sternum(template)):
        raise MissingSternum("sternum label required on both clouds")
    pts = subject.branch(0).points
    if transform is not None:
        pts = transform.apply_points(pts)
    return _rms_nn(cKDTree(template.branch(0).points), pts)


def preprocess_pipeline(subject: PointCloud, template: PointCloud,
                        params: ClusteringParams | None = None) -> tuple[PointCloud, RigidTransform, dict]:
    """Full cleanup of a raw subject cloud against a labeled template.

    Clusters the subject by density, drops small clusters, splits sides in the
    canonical frame, labels branches by vertical order per side, synthesizes a
    stand-in sternum, and coarse-aligns the result to the template. Returns
    the cleaned, labeled, aligned cloud, the coarse transform, and a report
    dict (cluster count, removed point count, transform entries).
    """
    params = params or ClusteringParams()
    ids = dbscan(subject, params)
    filtered, kept_ids = filter_small_clusters(subject, ids, params.resolve_min_cluster_size(len(subject)))
    removed = len(subject) - len(filtered)

    canonical, to_canonical = canonicalize(filtered)
    left, right = split_left_right(canonical, kept_ids)
    if not left or not right:
        raise MissingSide("all clusters fell on one side", left=len(left), right=len(right))

    labels = np.full(len(canonical), -1, dtype=np.int64)
    next_label = 1
    for side in (left, right):
        # Vertical order per side: highest first, matching the template convention.
        heights = {cid: float(canonical.points[kept_ids == cid][:, 2].mean()) for cid in side}
        for cid in sorted(side, key=lambda c: -heights[c]):
            labels[kept_ids == cid] = next_label
            next_label += 1

    left_cloud = canonical.select(np.isin(kept_ids, left))
    right_cloud = canonical.select(np.isin(kept_ids, right))
    sternum = synth_sternum(left_cloud, right_cloud)

    back = to_canonical.inverse()
    labeled = PointCloud(
        np.vstack([filtered.points, back.apply_points(sternum.points)]),
        np.concatenate([labels, np.zeros(len(sternum), dtype=np.int64)]),
    )

    transform = coarse_align(labeled, template)
    cleaned = PointCloud(transform.apply_points(labeled.points), labeled.labels.copy())
    report = {
        "clusters": int(len(left) + len(right)),
        "removed_points": int(removed),
        "coarse_transform": {
            "rotation": [[float(v) for v in row] for row in transform.rotation],
            "translation": [float(v) for v in transform.translation],
        },
    }
    return cleaned, transform, report
