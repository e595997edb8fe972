"""Parametric generator of template/subject cartilage point clouds.

Builds a desk-scale stand-in for paired skeleton acquisitions: a sternum plus
an even number of cartilage branches (default 8, four per side), with a known
smooth deformation between template and subject and ground-truth intercostal
waypoints. Branch centerlines are planar quadratic arcs swept into thin
tubes; branch length grows from the top row down, which breaks the up/down
symmetry that real cartilage also lacks.

Waypoint protocol: per side, the three intercostal spaces receive 2, 3 and 4
waypoints top to bottom. For each space both bounding branches are clustered
into that space's count, the cluster centroids are paired in arc-length
order, and the waypoints are the midpoints of paired centroids (18 total for
the default anatomy).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import derive_rng
from .errors import InvalidParams, MissingBranch
from .geometry import PointCloud, centroid, pca_axes

TUBE_RADIUS_MM = 2.0
BRANCH_LENGTH_GROWTH = 0.12  # per row, top to bottom
STERNUM_POINT_FACTOR = 1.5
STERNUM_MARGIN_MM = 6.0


@dataclass(frozen=True)
class DeformParams:
    """Template-to-subject deformation: global scale and translation, a smooth
    anterior bow, per-branch rigid jitter, then per-point noise and outliers."""

    global_scale: float = 1.0
    bend_amplitude: float = 0.0
    per_branch_jitter: float = 0.0
    outlier_fraction: float = 0.0
    noise_sigma: float = 0.0
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        if not self.global_scale > 0:
            raise InvalidParams("global_scale must be > 0")
        if not 0.0 <= self.outlier_fraction < 0.5:
            raise InvalidParams("outlier_fraction must be in [0, 0.5)")
        for name in ("bend_amplitude", "per_branch_jitter", "noise_sigma"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be >= 0")

    def is_identity(self) -> bool:
        return (self.global_scale == 1.0 and self.bend_amplitude == 0.0
                and self.per_branch_jitter == 0.0 and self.outlier_fraction == 0.0
                and self.noise_sigma == 0.0 and tuple(self.offset) == (0.0, 0.0, 0.0))


@dataclass(frozen=True)
class AnatomyParams:
    rng_seed: int = 0
    branch_count: int = 8
    branch_length: float = 90.0
    branch_spacing: float = 18.0
    sternum_width: float = 30.0
    points_per_branch: int = 120
    curvature: float = 0.3
    deform: DeformParams = field(default_factory=DeformParams)

    def validate(self) -> None:
        if self.branch_count < 2 or self.branch_count % 2 != 0:
            raise InvalidParams("branch_count must be even and >= 2")
        if self.branch_length <= 0 or self.branch_spacing <= 0 or self.sternum_width <= 0:
            raise InvalidParams("lengths and spacings must be > 0")
        if self.points_per_branch < 10:
            raise InvalidParams("points_per_branch must be >= 10")
        self.deform.validate()


@dataclass(frozen=True)
class GroundTruth:
    """Template-to-subject point correspondence plus paired waypoint lists."""

    correspondence: np.ndarray  # correspondence[i] = subject index of template point i
    waypoints_template: np.ndarray
    waypoints_subject: np.ndarray

    def __post_init__(self):
        if self.waypoints_template.shape != self.waypoints_subject.shape:
            raise InvalidParams("waypoint lists must have equal shape")
        if len(np.unique(self.correspondence)) != len(self.correspondence):
            raise InvalidParams("correspondence must be injective")


DEFORM_PROFILES = {
    "none": DeformParams(),
    "mild": DeformParams(bend_amplitude=5.0, per_branch_jitter=2.0, noise_sigma=0.3),
    "severe": DeformParams(global_scale=1.05, bend_amplitude=12.0, per_branch_jitter=3.0,
                           noise_sigma=0.6, outlier_fraction=0.05),
}


def _rows(params: AnatomyParams) -> int:
    return params.branch_count // 2


def _row_length(params: AnatomyParams, row: int) -> float:
    return params.branch_length * (1.0 + BRANCH_LENGTH_GROWTH * row)


def _branch_points(params: AnatomyParams, side: int, row: int, rng) -> np.ndarray:
    """Quadratic arc swept into a solid tube of radius TUBE_RADIUS_MM."""
    n = params.points_per_branch
    length = _row_length(params, row)
    t = rng.uniform(0.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    rho = TUBE_RADIUS_MM * np.sqrt(rng.uniform(0.0, 1.0, n))

    cx = side * (params.sternum_width / 2.0 + length * t)
    cy = params.curvature * length * t * t
    cz = np.full(n, -row * params.branch_spacing)

    tangent = np.stack([np.full(n, side * length), 2.0 * params.curvature * length * t,
                        np.zeros(n)], axis=1)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    n1 = np.array([0.0, 0.0, 1.0])  # orthogonal to every tangent (tangents stay in xy)
    n2 = np.cross(tangent, n1)
    n2 /= np.linalg.norm(n2, axis=1, keepdims=True)

    center = np.stack([cx, cy, cz], axis=1)
    return center + rho[:, None] * (np.cos(phi)[:, None] * n1 + np.sin(phi)[:, None] * n2)


def _sternum_points(params: AnatomyParams, rng) -> np.ndarray:
    """Skewed trapezoid band, wider at the top; the asymmetry is what lets the
    coarse alignment disambiguate axis-sign hypotheses."""
    rows = _rows(params)
    n = int(round(STERNUM_POINT_FACTOR * params.points_per_branch))
    z_top = STERNUM_MARGIN_MM
    z_bottom = -(rows - 1) * params.branch_spacing - STERNUM_MARGIN_MM
    u = rng.uniform(0.0, 1.0, n)  # 0 bottom, 1 top
    v = rng.uniform(-0.5, 0.5, n)
    w = params.sternum_width
    x = v * w * (0.85 + 0.45 * u) + 0.18 * w * (u - 0.5)
    y = rng.normal(0.0, 0.4, n)
    z = z_bottom + u * (z_top - z_bottom)
    return np.stack([x, y, z], axis=1)


def build_template(params: AnatomyParams) -> PointCloud:
    """Labeled template cloud: sternum label 0, branches 1..branch_count with
    the left column first, each side numbered top to bottom."""
    params.validate()
    rng = derive_rng(params.rng_seed, "synthesis.template")
    rows = _rows(params)
    chunks = [_sternum_points(params, rng)]
    labels = [np.zeros(len(chunks[0]), dtype=np.int64)]
    for side_index, side in enumerate((-1, +1)):
        for row in range(rows):
            pts = _branch_points(params, side, row, rng)
            chunks.append(pts)
            labels.append(np.full(len(pts), side_index * rows + row + 1, dtype=np.int64))
    return PointCloud(np.vstack(chunks), np.concatenate(labels))


class _Deformation:
    """Smooth template-to-subject map, applicable to points and waypoints."""

    def __init__(self, params: AnatomyParams, template: PointCloud, rng):
        self.deform = params.deform
        self.center = centroid(template)
        z = template.points[:, 2]
        self.z_min, self.z_max = float(z.min()), float(z.max())
        n_branches = params.branch_count
        if self.deform.per_branch_jitter > 0:
            self.branch_offsets = rng.normal(0.0, self.deform.per_branch_jitter, (n_branches + 1, 3))
            self.branch_offsets[0] = 0.0   # sternum stays put
            # Jitter lives in the anterior/vertical plane: along-branch shifts
            # of a uniform tube are unobservable to any registration method.
            self.branch_offsets[:, 0] = 0.0
        else:
            self.branch_offsets = np.zeros((n_branches + 1, 3))

    def _smooth(self, pts: np.ndarray) -> np.ndarray:
        d = self.deform
        out = pts
        if d.global_scale != 1.0:
            out = self.center + d.global_scale * (out - self.center)
        if d.bend_amplitude != 0.0:
            span = max(self.z_max - self.z_min, 1e-12)
            u = (pts[:, 2] - self.z_min) / span  # parameterized on template z
            out = out.copy()
            out[:, 1] += d.bend_amplitude * np.sin(np.pi * u)
        if tuple(d.offset) != (0.0, 0.0, 0.0):
            out = out + np.asarray(d.offset, dtype=np.float64)
        return out

    def apply_cloud(self, template: PointCloud) -> np.ndarray:
        pts = self._smooth(template.points)
        if self.deform.per_branch_jitter > 0:
            pts = pts + self.branch_offsets[np.clip(template.labels, 0, None)]
        return pts

    def apply_waypoints(self, waypoints: np.ndarray, parents: np.ndarray) -> np.ndarray:
        pts = self._smooth(waypoints)
        if self.deform.per_branch_jitter > 0:
            pts = pts + 0.5 * (self.branch_offsets[parents[:, 0]] + self.branch_offsets[parents[:, 1]])
        return pts


def generate_pair(params: AnatomyParams) -> tuple[PointCloud, PointCloud, GroundTruth]:
    """Template, deformed subject, and ground truth for one seed.

    The subject is the deformed template plus per-point noise, with optional
    outlier points appended; the correspondence is therefore the identity on
    template indices. Subject ground-truth waypoints are the images of the
    template waypoints under the smooth deformation (noise excluded).
    """
    params.validate()
    template = build_template(params)
    waypoints, parents = _waypoints_with_parents(template)

    rng = derive_rng(params.rng_seed, "synthesis.deform")
    deformation = _Deformation(params, template, rng)
    subject_pts = deformation.apply_cloud(template)
    subject_labels = template.labels.copy()

    if params.deform.noise_sigma > 0:
        noise_rng = derive_rng(params.rng_seed, "synthesis.noise")
        subject_pts = subject_pts + noise_rng.normal(0.0, params.deform.noise_sigma, subject_pts.shape)

    if params.deform.outlier_fraction > 0:
        out_rng = derive_rng(params.rng_seed, "synthesis.outliers")
        n_out = int(np.floor(params.deform.outlier_fraction * len(template)))
        if n_out:
            lo, hi = subject_pts.min(axis=0), subject_pts.max(axis=0)
            mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
            extra = out_rng.uniform(mid - 1.5 * half, mid + 1.5 * half, (n_out, 3))
            extra_labels = out_rng.integers(1, params.branch_count + 1, n_out)
            subject_pts = np.vstack([subject_pts, extra])
            subject_labels = np.concatenate([subject_labels, extra_labels])

    truth = GroundTruth(
        correspondence=np.arange(len(template), dtype=np.int64),
        waypoints_template=waypoints,
        waypoints_subject=deformation.apply_waypoints(waypoints, parents),
    )
    return template, PointCloud(subject_pts, subject_labels), truth


def space_waypoint_count(space_index: int) -> int:
    """Waypoints per intercostal space, top to bottom: 2, 3, then 4."""
    return min(2 + space_index, 4)


def waypoints_from_cloud(cloud: PointCloud) -> np.ndarray:
    """Extract intercostal waypoints from a branch-labeled cloud.

    Branches are grouped into two lateral sides and ordered vertically
    (top = shortest branch end, matching the generated anatomy; when branch
    lengths carry no gradient, a deterministic axis-sign convention is used).
    See module docstring for the per-space protocol.
    """
    waypoints, _ = _waypoints_with_parents(cloud)
    return waypoints


def _waypoints_with_parents(cloud: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    labels = cloud.branch_labels()
    if len(labels) < 2:
        raise MissingBranch("waypoint extraction needs at least 2 labeled branches",
                            found=[int(v) for v in labels])

    info = {}
    for lab in labels:
        pts = cloud.branch(int(lab)).points
        if len(pts) < 3:
            raise MissingBranch(f"branch {int(lab)} has fewer than 3 points", branch=int(lab))
        axes, _ = pca_axes(pts)
        t = pts @ axes[0]
        info[int(lab)] = {
            "points": pts,
            "centroid": pts.mean(axis=0),
            "axis": axes[0],
            "extent": float(t.max() - t.min()),
        }

    sides = _split_sides(info)
    order_axis = _vertical_axis(info)

    waypoints = []
    parents = []
    for side in sides:
        ordered = sorted(side, key=lambda lab: float(info[lab]["centroid"] @ order_axis))
        direction = _side_direction(info, ordered)
        for k in range(len(ordered) - 1):
            lab_a, lab_b = ordered[k], ordered[k + 1]
            count = space_waypoint_count(k)
            ca = _ordered_cluster_centroids(info[lab_a]["points"], count, direction)
            cb = _ordered_cluster_centroids(info[lab_b]["points"], count, direction)
            for i in range(count):
                waypoints.append((ca[i] + cb[i]) / 2.0)
                parents.append((lab_a, lab_b))
    return np.asarray(waypoints, dtype=np.float64), np.asarray(parents, dtype=np.int64)


def _split_sides(info: dict) -> list[list[int]]:
    """Group branches into lateral sides by the common branch-axis direction."""
    labs = sorted(info)
    axes = np.stack([info[lab]["axis"] for lab in labs])
    # Sign-free common direction: leading eigenvector of the axis outer products.
    m = axes.T @ axes
    evals, evecs = np.linalg.eigh(m)
    lateral = evecs[:, int(np.argmax(evals))]
    cents = np.stack([info[lab]["centroid"] for lab in labs])
    proj = (cents - cents.mean(axis=0)) @ lateral
    spread = np.abs(proj).max()
    if spread < 1e-9:
        return [labs]
    left = [lab for lab, p in zip(labs, proj) if p < 0]
    right = [lab for lab, p in zip(labs, proj) if p >= 0]
    sides = [s for s in (left, right) if s]
    return sorted(sides, key=lambda s: float(np.mean([info[lab]["centroid"] @ lateral for lab in s])))


def _vertical_axis(info: dict) -> np.ndarray:
    """Stacking direction of the branches, oriented so branch length grows
    along it (the anatomy's top rows are the short ones)."""
    labs = sorted(info)
    cents = np.stack([info[lab]["centroid"] for lab in labs])
    axes = np.stack([info[lab]["axis"] for lab in labs])
    m = axes.T @ axes
    evals, evecs = np.linalg.eigh(m)
    lateral = evecs[:, int(np.argmax(evals))]
    resid = cents - cents.mean(axis=0)
    resid = resid - np.outer(resid @ lateral, lateral)
    cov = resid.T @ resid
    evals, evecs = np.linalg.eigh(cov)
    v = evecs[:, int(np.argmax(evals))]
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    extents = np.array([info[lab]["extent"] for lab in labs])
    heights = cents @ v
    corr = float(np.sum((extents - extents.mean()) * (heights - heights.mean())))
    if abs(corr) > 1e-9 * max(extents.max(), 1.0) and corr < 0:
        v = -v
    return v


def _side_direction(info: dict, side: list[int]) -> np.ndarray:
    """Common arc-length direction for one side, consistent across branches."""
    ref = info[side[0]]["axis"]
    k = int(np.argmax(np.abs(ref)))
    if ref[k] < 0:
        ref = -ref
    acc = np.zeros(3)
    for lab in side:
        ax = info[lab]["axis"]
        acc += ax if float(ax @ ref) >= 0 else -ax
    return acc / np.linalg.norm(acc)


def _ordered_cluster_centroids(pts: np.ndarray, k: int, direction: np.ndarray) -> np.ndarray:
    """Lloyd's k-means with arc-length quantile init; centroids returned in
    arc-length order. Deterministic for a given point set."""
    t = pts @ direction
    order = np.argsort(t, kind="stable")
    centers = np.stack([pts[chunk].mean(axis=0) for chunk in np.array_split(order, k)])
    for _ in range(50):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        new = centers.copy()
        for j in range(k):
            member = assign == j
            if member.any():
                new[j] = pts[member].mean(axis=0)
        if np.abs(new - centers).max() < 1e-12:
            centers = new
            break
        centers = new
    return centers[np.argsort(centers @ direction, kind="stable")]


def params_for_profile(seed: int, profile: str, base: AnatomyParams | None = None) -> AnatomyParams:
    """AnatomyParams for a named deformation profile (none, mild, severe)."""
    if profile not in DEFORM_PROFILES:
        raise InvalidParams(f"unknown deform profile {profile!r}, expected one of {sorted(DEFORM_PROFILES)}")
    base = base if base is not None else AnatomyParams()
    return replace(base, rng_seed=seed, deform=DEFORM_PROFILES[profile])
